// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Invert-then-edit driver: one recorded inversion pass, then any number of
// mixed denoising passes that reuse it.

#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "amk/backend_adapter.hpp"
#include "amk/feature_pipeline.hpp"

namespace amk {

struct InversionResult {
    Latent noise;                         ///< latent at t = 1
    std::shared_ptr<FeatureCache> cache;  ///< sealed

    void save(const std::filesystem::path& dir) const;
    static InversionResult load(const std::filesystem::path& dir);
};

/// Integrates image -> noise under `source_prompt`, recording K/V at every site.
InversionResult invert(const VelocityBackend& backend, const Latent& image, const StepSchedule& schedule,
                       const std::string& source_prompt);

/// Denoises from the inverted noise under `target_prompt`, mixing cached
/// features per `cfg`. `audit`, when given, receives the mixer's site log.
Latent edit(const VelocityBackend& backend, const InversionResult& inversion, const StepSchedule& schedule,
            const std::string& target_prompt, const MixingConfig& cfg, std::shared_ptr<AuditLog>* audit = nullptr);

}  // namespace amk
