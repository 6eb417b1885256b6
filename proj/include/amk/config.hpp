// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration shared by the command-line tools.
//
// Layers, later wins: built-in defaults, a key = value file, AMK_<KEY>
// environment variables, command-line flags. Every layer goes through
// set_key(), so the same names and validation apply everywhere.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "amk/backend_adapter.hpp"
#include "amk/sar_reference.hpp"

namespace amk {

struct CliConfig {
    std::string backend = "toy";
    std::string model_path;
    std::uint64_t seed = 0;
    std::size_t steps = 30;
    float g = 1.0f;
    std::string preset = "full";
    /// false strips aging regularization from presets that carry it.
    bool sar = true;
    ClusterSource sar_source = ClusterSource::synthetic;
    std::size_t cluster_size = 4;
    int sar_age_low = 30;
    int sar_age_high = 70;
    std::string image_service_url;
    std::string cache_dir = "cache";
    std::string refine_mode = "template";
    std::string llm_endpoint;
    std::string llm_model = "gpt-4o";

    /// Throws ValidationError on an unknown key or unparsable value.
    void set_key(const std::string& key, const std::string& value);
    /// Cross-field checks (known preset, steps >= 1, finite g, ...).
    void validate() const;

    BackendConfig backend_config() const;
    nlohmann::json to_json() const;
};

/// Every key accepted by set_key, in declaration order.
const std::vector<std::string>& config_keys();

/// Applies a key = value document. '#' starts a comment, values may be
/// double-quoted, [section] headers are ignored. Errors carry the line number.
void apply_config_text(CliConfig& cfg, const std::string& text, const std::string& origin = "config");
void apply_config_file(CliConfig& cfg, const std::filesystem::path& path);

using EnvLookup = std::function<std::optional<std::string>(const std::string& name)>;
/// Reads AMK_<KEY> for every key. Defaults to the process environment.
void apply_env(CliConfig& cfg, const EnvLookup& lookup = {});

}  // namespace amk
