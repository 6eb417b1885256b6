// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/feature_pipeline.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "amk/array_io.hpp"
#include "amk/error.hpp"
#include "amk/fs_util.hpp"

namespace amk {

namespace {

using nlohmann::json;

constexpr const char* kCacheFormat = "amk-feature-cache";
constexpr int kCacheVersion = 1;

std::string block_file(const SiteKey& site, char which) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "s%04d_l%03d_%c.bin", site.step, site.layer, which);
    return buf;
}

json layout_json(const TokenLayout& l) {
    return json{{"text_tokens", l.text_tokens}, {"image_tokens", l.image_tokens}, {"heads", l.heads},
                {"head_dim", l.head_dim}};
}

TokenLayout layout_from_json(const json& j) {
    TokenLayout l;
    l.text_tokens = j.at("text_tokens").get<std::size_t>();
    l.image_tokens = j.at("image_tokens").get<std::size_t>();
    l.heads = j.at("heads").get<std::size_t>();
    l.head_dim = j.at("head_dim").get<std::size_t>();
    l.validate();
    return l;
}

}  // namespace

void FeatureCache::record(const SiteKey& site, const FeatureBlock& k, const FeatureBlock& v) {
    AMK_REQUIRE(!sealed_, "FeatureCache: cannot record into a sealed cache");
    AMK_REQUIRE(!contains(site), "FeatureCache: site (step ", site.step, ", layer ", site.layer,
                ") already recorded");
    entries_.emplace(site, KeyValue{k, v});
}

const KeyValue& FeatureCache::fetch(const SiteKey& site) const {
    const KeyValue* kv = find(site);
    AMK_REQUIRE(kv != nullptr, "FeatureCache: no entry for site (step ", site.step, ", layer ", site.layer, ")");
    return *kv;
}

const KeyValue* FeatureCache::find(const SiteKey& site) const {
    AMK_REQUIRE(sealed_, "FeatureCache: read before the inversion pass completed");
    auto it = entries_.find(site);
    return it == entries_.end() ? nullptr : &it->second;
}

void FeatureCache::save(const std::filesystem::path& dir) const {
    save_site_features(dir, entries_, FeatureDirInfo{schedule_id_, backend_id_, {}});
}

FeatureCache FeatureCache::load(const std::filesystem::path& dir) {
    FeatureCache cache;
    FeatureDirInfo info;
    cache.entries_ = load_site_features(dir, &info);
    cache.schedule_id_ = std::move(info.schedule_id);
    cache.backend_id_ = std::move(info.backend_id);
    cache.sealed_ = true;
    return cache;
}

void save_site_features(const std::filesystem::path& dir, const std::map<SiteKey, KeyValue>& features,
                        const FeatureDirInfo& info) {
    if (!dir.parent_path().empty()) std::filesystem::create_directories(dir.parent_path());
    const auto staged = staging_path(dir);
    std::filesystem::create_directories(staged);
    try {
        json layouts = json::array();
        std::map<int, TokenLayout> by_layer;
        json entries = json::array();
        for (const auto& [site, kv] : features) {
            auto [it, inserted] = by_layer.emplace(site.layer, kv.k.layout());
            AMK_REQUIRE(it->second == kv.k.layout() && kv.k.layout() == kv.v.layout(),
                        "save_site_features: inconsistent layout at layer ", site.layer);
            const std::string kf = block_file(site, 'k');
            const std::string vf = block_file(site, 'v');
            write_file(staged / kf, encode_array(std::vector<std::size_t>{kv.k.layout().heads,
                                                                          kv.k.layout().total_tokens(),
                                                                          kv.k.layout().head_dim},
                                                 kv.k.values()));
            write_file(staged / vf, encode_array(std::vector<std::size_t>{kv.v.layout().heads,
                                                                          kv.v.layout().total_tokens(),
                                                                          kv.v.layout().head_dim},
                                                 kv.v.values()));
            entries.push_back(json{{"step", site.step}, {"layer", site.layer}, {"k", kf}, {"v", vf}});
        }
        for (const auto& [layer, l] : by_layer) {
            json entry = layout_json(l);
            entry["layer"] = layer;
            layouts.push_back(entry);
        }
        json manifest{{"format", kCacheFormat},      {"version", kCacheVersion}, {"schedule_id", info.schedule_id},
                      {"backend_id", info.backend_id}, {"layouts", layouts},        {"entries", entries}};
        if (!info.extra_json.empty()) manifest["extra"] = json::parse(info.extra_json);
        write_file(staged / "manifest.json", manifest.dump(2) + "\n");
        commit_directory(staged, dir);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove_all(staged, ec);
        throw;
    }
}

std::map<SiteKey, KeyValue> load_site_features(const std::filesystem::path& dir, FeatureDirInfo* info) {
    json manifest;
    try {
        manifest = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IoError("feature directory " + dir.string() + ": unreadable manifest: " + e.what());
    }
    if (manifest.value("format", "") != kCacheFormat)
        throw IoError("feature directory " + dir.string() + ": not a feature cache manifest");
    if (manifest.value("version", 0) != kCacheVersion)
        throw IoError("feature directory " + dir.string() + ": unsupported version");

    std::map<int, TokenLayout> layouts;
    for (const auto& l : manifest.at("layouts")) layouts.emplace(l.at("layer").get<int>(), layout_from_json(l));

    std::map<SiteKey, KeyValue> out;
    for (const auto& e : manifest.at("entries")) {
        SiteKey site{e.at("step").get<int>(), e.at("layer").get<int>()};
        auto it = layouts.find(site.layer);
        if (it == layouts.end())
            throw IoError("feature directory " + dir.string() + ": no layout for layer " + std::to_string(site.layer));
        out.emplace(site, KeyValue{read_block(dir / e.at("k").get<std::string>(), it->second),
                                   read_block(dir / e.at("v").get<std::string>(), it->second)});
    }
    if (info) {
        info->schedule_id = manifest.value("schedule_id", "");
        info->backend_id = manifest.value("backend_id", "");
        info->extra_json = manifest.contains("extra") ? manifest["extra"].dump() : std::string();
    }
    return out;
}

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::none: return "none";
        case Strategy::replace_v: return "replace_v";
        case Strategy::project_v: return "project_v";
        case Strategy::project_v_mask: return "project_v_mask";
        case Strategy::project_v_mask_keymod: return "project_v_mask_keymod";
    }
    return "?";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
    for (Strategy s : {Strategy::none, Strategy::replace_v, Strategy::project_v, Strategy::project_v_mask,
                       Strategy::project_v_mask_keymod})
        if (name == to_string(s)) return s;
    return std::nullopt;
}

void MixingConfig::validate(std::size_t steps, std::size_t layers) const {
    AMK_REQUIRE(std::isfinite(g), "MixingConfig: g must be finite");
    AMK_REQUIRE(active_steps.first >= 0 && active_steps.first <= active_steps.last,
                "MixingConfig: empty or negative active step range");
    AMK_REQUIRE(static_cast<std::size_t>(active_steps.first) < steps, "MixingConfig: active steps start at ",
                active_steps.first, " but the schedule has ", steps, " steps");
    for (int layer : active_layers)
        AMK_REQUIRE(layer >= 0 && static_cast<std::size_t>(layer) < layers, "MixingConfig: active layer ", layer,
                    " outside backend range [0, ", layers, ")");
    if (alpha_clamp)
        AMK_REQUIRE(alpha_clamp->min <= alpha_clamp->max, "MixingConfig: alpha clamp min exceeds max");
    if (sar) {
        AMK_REQUIRE(sar->direction != nullptr, "MixingConfig: SAR enabled without a direction");
        AMK_REQUIRE(std::isfinite(sar->w), "MixingConfig: SAR weight must be finite");
    }
}

const std::vector<Preset>& ablation_ladder() {
    static const std::vector<Preset> ladder = {
        {"replace_v", "RF-Solver-Edit (baseline)", Strategy::replace_v, false, false},
        {"project_v", "+ Att. Mixing (Value only)", Strategy::project_v, false, false},
        {"project_v_mask", "+ Text Embedding Masking", Strategy::project_v_mask, true, false},
        {"project_v_mask_keymod", "+ Att. Mixing (Value & Key)", Strategy::project_v_mask_keymod, true, false},
        {"full", "+ Simulated Aging Regularization", Strategy::project_v_mask_keymod, true, true},
    };
    return ladder;
}

std::optional<Preset> find_preset(std::string_view name) {
    if (name == "none") return Preset{"none", "No mixing", Strategy::none, false, false};
    if (name == "baseline") name = "replace_v";
    for (const auto& p : ablation_ladder())
        if (p.name == name) return p;
    return std::nullopt;
}

MixingConfig make_config(const Preset& preset, float g, std::optional<SarSettings> sar) {
    MixingConfig cfg;
    cfg.strategy = preset.strategy;
    cfg.mask_text = preset.mask_text;
    cfg.g = g;
    if (preset.sar) {
        AMK_REQUIRE(sar.has_value(), "preset '", preset.name, "' needs an aging direction");
        cfg.sar = std::move(sar);
    }
    return cfg;
}

QKV apply_strategy(const SiteContext& ctx, const FeatureBlock& q_edit, const FeatureBlock& k_edit,
                   const FeatureBlock& v_edit, const FeatureCache& cache, const MixingConfig& cfg) {
    if (cfg.strategy == Strategy::none || !cfg.active_at(ctx)) return {q_edit, k_edit, v_edit};

    const KeyValue& cached = cache.fetch(ctx.site());
    switch (cfg.strategy) {
        case Strategy::replace_v:
            return {q_edit, k_edit, cached.v};
        case Strategy::project_v:
        case Strategy::project_v_mask:
            return {q_edit, k_edit, project_value(cached.v, v_edit, cfg.masks_text(), cfg.alpha_clamp)};
        case Strategy::project_v_mask_keymod: {
            const KeyValue* delta = cfg.sar ? cfg.sar->direction->find(ctx.site()) : nullptr;
            if (delta != nullptr) {
                auto [k_inv, v_inv] = apply_aging_direction(cached.k, cached.v, *delta, cfg.sar->w);
                return {q_edit, modulate_key(k_edit, k_inv, cfg.g),
                        project_value(v_inv, v_edit, cfg.masks_text(), cfg.alpha_clamp)};
            }
            return {q_edit, modulate_key(k_edit, cached.k, cfg.g),
                    project_value(cached.v, v_edit, cfg.masks_text(), cfg.alpha_clamp)};
        }
        case Strategy::none:
            break;
    }
    return {q_edit, k_edit, v_edit};
}

HookPair build_hooks(std::shared_ptr<FeatureCache> cache, MixingConfig cfg) {
    AMK_REQUIRE(cache != nullptr, "build_hooks: cache is null");
    HookPair pair;
    pair.recorder_audit = std::make_shared<AuditLog>();
    pair.mixer_audit = std::make_shared<AuditLog>();

    pair.recorder = [cache, audit = pair.recorder_audit](const SiteContext& ctx, FeatureBlock&, FeatureBlock& k,
                                                          FeatureBlock& v) {
        if (ctx.stage != 0) return;
        cache->record(ctx.site(), k, v);
        audit->append(ctx);
    };

    pair.mixer = [cache, cfg = std::move(cfg), audit = pair.mixer_audit](const SiteContext& ctx, FeatureBlock& q,
                                                                         FeatureBlock& k, FeatureBlock& v) {
        if (cfg.strategy == Strategy::none || !cfg.active_at(ctx)) return;
        QKV out = apply_strategy(ctx, q, k, v, *cache, cfg);
        k = std::move(out.k);
        v = std::move(out.v);
        audit->append(ctx);
    };
    return pair;
}

}  // namespace amk
