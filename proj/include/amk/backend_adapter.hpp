// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Backend selection. The toy backend is always available; real flow-matching
// backbones plug in through the external registry and are looked up by name
// ("external:<name>"). Nothing here downloads or ships weights.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "amk/rf_engine.hpp"

namespace amk {

struct BackendDescriptor {
    std::string name;
    std::vector<std::size_t> latent_shape;
    std::vector<AttentionSite> sites;
    bool supports_hooks = true;
    bool supports_text_mask = true;
};

/// A velocity backend that also owns the image <-> latent mapping.
class GenerativeBackend : public VelocityBackend {
public:
    virtual BackendDescriptor describe() const;

    /// Throws IoError for unreadable images and ValidationError for a
    /// resolution the backend does not accept.
    virtual Latent encode_image_bytes(std::string_view png) const = 0;
    Latent encode_image(const std::filesystem::path& path) const;
    virtual std::string decode_latent(const Latent& latent) const = 0;

    /// Holds the backend for one generation. Real backbones are not reentrant,
    /// so every job serializes on this gate.
    std::unique_lock<std::mutex> begin_job() const { return std::unique_lock(job_mutex_); }
    std::unique_lock<std::mutex> try_begin_job() const { return std::unique_lock(job_mutex_, std::try_to_lock); }

private:
    mutable std::mutex job_mutex_;
};

struct ToyModelSpec {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t head_dim = 8;
    std::size_t text_tokens = 4;
    std::size_t image_tokens = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

struct BackendConfig {
    /// "toy" (or empty) or "external:<name>". AMK_BACKEND overrides it.
    std::string selection = "toy";
    /// Weights / checkpoint location for external backends.
    std::string model_path;
    ToyModelSpec toy;
};

using BackendFactory = std::function<std::shared_ptr<GenerativeBackend>(const BackendConfig&)>;

/// Process-wide registry of external backend adapters.
void register_external_backend(const std::string& name, BackendFactory factory);
void unregister_external_backend(const std::string& name);

/// Effective selection after applying the AMK_BACKEND override.
std::string resolve_selection(const BackendConfig& cfg);

/// Descriptor of the configured external backend; empty when none is
/// configured. A configured-but-broken backend throws BackendError naming the
/// missing piece.
std::optional<BackendDescriptor> probe(const BackendConfig& cfg);

/// The configured backend, falling back to the toy backend.
std::shared_ptr<GenerativeBackend> open_backend(const BackendConfig& cfg);

}  // namespace amk
