// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/backend_adapter.hpp"

#include <cstdlib>
#include <map>

#include "amk/error.hpp"
#include "amk/fs_util.hpp"
#include "amk/toy_backend.hpp"

namespace amk {

namespace {

constexpr std::string_view kExternalPrefix = "external:";

struct Registry {
    std::mutex mu;
    std::map<std::string, BackendFactory> factories;
};

Registry& registry() {
    static Registry r;
    return r;
}

std::shared_ptr<GenerativeBackend> open_external(const std::string& selection, const BackendConfig& cfg) {
    const std::string name = selection.substr(kExternalPrefix.size());
    if (name.empty()) throw BackendError("backend '" + selection + "': missing adapter name after 'external:'");
    BackendFactory factory;
    {
        std::lock_guard lock(registry().mu);
        auto it = registry().factories.find(name);
        if (it == registry().factories.end())
            throw BackendError("backend '" + selection + "' is configured but no adapter named '" + name +
                               "' is registered in this build");
        factory = it->second;
    }
    std::shared_ptr<GenerativeBackend> backend;
    try {
        backend = factory(cfg);
    } catch (const BackendError&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError("backend '" + selection + "' failed to load: " + e.what());
    }
    if (!backend) throw BackendError("backend '" + selection + "': adapter returned no backend");
    return backend;
}

}  // namespace

BackendDescriptor GenerativeBackend::describe() const {
    BackendDescriptor d;
    d.name = id();
    d.latent_shape = latent_shape();
    d.sites = attention_sites();
    d.supports_hooks = !d.sites.empty();
    d.supports_text_mask = true;
    return d;
}

Latent GenerativeBackend::encode_image(const std::filesystem::path& path) const {
    return encode_image_bytes(read_file(path));
}

void register_external_backend(const std::string& name, BackendFactory factory) {
    std::lock_guard lock(registry().mu);
    registry().factories[name] = std::move(factory);
}

void unregister_external_backend(const std::string& name) {
    std::lock_guard lock(registry().mu);
    registry().factories.erase(name);
}

std::string resolve_selection(const BackendConfig& cfg) {
    if (const char* env = std::getenv("AMK_BACKEND"); env != nullptr && *env != '\0') return env;
    return cfg.selection.empty() ? "toy" : cfg.selection;
}

std::optional<BackendDescriptor> probe(const BackendConfig& cfg) {
    const std::string selection = resolve_selection(cfg);
    if (selection == "toy") return std::nullopt;
    if (selection.rfind(kExternalPrefix, 0) != 0)
        throw BackendError("unknown backend selection '" + selection + "' (expected 'toy' or 'external:<name>')");
    auto backend = open_external(selection, cfg);
    BackendDescriptor d = backend->describe();
    if (d.supports_hooks && d.sites.empty())
        throw BackendError("backend '" + selection + "' claims hook support but declares no attention sites");
    return d;
}

std::shared_ptr<GenerativeBackend> open_backend(const BackendConfig& cfg) {
    const std::string selection = resolve_selection(cfg);
    if (selection == "toy") return build_toy_backend(cfg.toy);
    if (selection.rfind(kExternalPrefix, 0) != 0)
        throw BackendError("unknown backend selection '" + selection + "' (expected 'toy' or 'external:<name>')");
    return open_external(selection, cfg);
}

}  // namespace amk
