// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/config.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "amk/error.hpp"
#include "amk/feature_pipeline.hpp"
#include "amk/fs_util.hpp"

namespace amk {

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    std::istringstream in(value);
    in >> out;
    if (!in || !in.eof() || (std::is_unsigned_v<T> && !value.empty() && value[0] == '-'))
        throw ValidationError("config: '" + key + "' expects a number, got '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    const std::string v = to_lower(value);
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ValidationError("config: '" + key + "' expects true/false, got '" + value + "'");
}

ClusterSource parse_source(const std::string& value) {
    for (ClusterSource s : {ClusterSource::synthetic, ClusterSource::external_service, ClusterSource::user_supplied})
        if (value == to_string(s)) return s;
    throw ValidationError("config: unknown sar_source '" + value + "'");
}

std::string env_name(const std::string& key) {
    std::string out = "AMK_";
    for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "backend",      "model_path",  "seed",         "steps",         "g",         "preset",
        "sar",          "sar_source",  "cluster_size", "sar_age_low",   "sar_age_high", "image_service_url",
        "cache_dir",    "refine_mode", "llm_endpoint", "llm_model"};
    return keys;
}

void CliConfig::set_key(const std::string& key, const std::string& value) {
    if (key == "backend") backend = value;
    else if (key == "model_path") model_path = value;
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
    else if (key == "steps") steps = parse_number<std::size_t>(key, value);
    else if (key == "g") g = parse_number<float>(key, value);
    else if (key == "preset") preset = value;
    else if (key == "sar") sar = parse_bool(key, value);
    else if (key == "sar_source") sar_source = parse_source(value);
    else if (key == "cluster_size") cluster_size = parse_number<std::size_t>(key, value);
    else if (key == "sar_age_low") sar_age_low = parse_number<int>(key, value);
    else if (key == "sar_age_high") sar_age_high = parse_number<int>(key, value);
    else if (key == "image_service_url") image_service_url = value;
    else if (key == "cache_dir") cache_dir = value;
    else if (key == "refine_mode") refine_mode = value;
    else if (key == "llm_endpoint") llm_endpoint = value;
    else if (key == "llm_model") llm_model = value;
    else throw ValidationError("config: unknown key '" + key + "'");
}

void CliConfig::validate() const {
    if (!find_preset(preset)) throw ValidationError("config: unknown preset '" + preset + "'");
    if (steps < 1) throw ValidationError("config: steps must be at least 1");
    if (!std::isfinite(g)) throw ValidationError("config: g must be finite");
    if (cluster_size < 1) throw ValidationError("config: cluster_size must be at least 1");
    if (sar_age_low == sar_age_high) throw ValidationError("config: sar_age_low and sar_age_high must differ");
    if (refine_mode != "template" && refine_mode != "llm")
        throw ValidationError("config: refine_mode must be 'template' or 'llm'");
    if (sar_source == ClusterSource::external_service && image_service_url.empty())
        throw ValidationError("config: sar_source external_service needs image_service_url");
}

BackendConfig CliConfig::backend_config() const {
    BackendConfig bc;
    bc.selection = backend;
    bc.model_path = model_path;
    bc.toy.seed = seed;
    return bc;
}

nlohmann::json CliConfig::to_json() const {
    return nlohmann::json{{"backend", backend},
                          {"model_path", model_path},
                          {"seed", seed},
                          {"steps", steps},
                          {"g", g},
                          {"preset", preset},
                          {"sar", sar},
                          {"sar_source", to_string(sar_source)},
                          {"cluster_size", cluster_size},
                          {"sar_age_low", sar_age_low},
                          {"sar_age_high", sar_age_high},
                          {"image_service_url", image_service_url},
                          {"cache_dir", cache_dir},
                          {"refine_mode", refine_mode},
                          {"llm_endpoint", llm_endpoint},
                          {"llm_model", llm_model}};
}

void apply_config_text(CliConfig& cfg, const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string body = line;
        bool quoted = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
            if (body[i] == '"') quoted = !quoted;
            if (body[i] == '#' && !quoted) {
                body.resize(i);
                break;
            }
        }
        body = trim(body);
        if (body.empty() || body.front() == '[') continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(body.substr(0, eq));
        std::string value = trim(body.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        try {
            cfg.set_key(key, value);
        } catch (const ValidationError& e) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void apply_config_file(CliConfig& cfg, const std::filesystem::path& path) {
    apply_config_text(cfg, read_file(path), path.string());
}

void apply_env(CliConfig& cfg, const EnvLookup& lookup) {
    for (const auto& key : config_keys()) {
        const std::string name = env_name(key);
        std::optional<std::string> value;
        if (lookup) {
            value = lookup(name);
        } else if (const char* v = std::getenv(name.c_str())) {
            value = v;
        }
        if (!value) continue;
        try {
            cfg.set_key(key, *value);
        } catch (const ValidationError& e) {
            throw ValidationError(name + ": " + e.what());
        }
    }
}

}  // namespace amk
