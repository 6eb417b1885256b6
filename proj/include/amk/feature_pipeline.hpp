// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Records inversion-branch attention features and mixes them into the editing
// branch during denoising.

#pragma once

#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "amk/attention_math.hpp"
#include "amk/rf_engine.hpp"

namespace amk {

/// Inversion K/V per (grid interval, layer). Write-once; readable only after
/// seal(), i.e. once the inversion pass has finished.
class FeatureCache {
public:
    FeatureCache() = default;
    FeatureCache(std::string schedule_id, std::string backend_id)
        : schedule_id_(std::move(schedule_id)), backend_id_(std::move(backend_id)) {}

    void record(const SiteKey& site, const FeatureBlock& k, const FeatureBlock& v);
    const KeyValue& fetch(const SiteKey& site) const;
    const KeyValue* find(const SiteKey& site) const;
    bool contains(const SiteKey& site) const { return entries_.count(site) != 0; }
    std::size_t size() const { return entries_.size(); }
    const std::map<SiteKey, KeyValue>& entries() const { return entries_; }

    void seal() { sealed_ = true; }
    bool sealed() const { return sealed_; }

    const std::string& schedule_id() const { return schedule_id_; }
    const std::string& backend_id() const { return backend_id_; }

    /// Directory with manifest.json plus one array file per (step, layer, k|v).
    /// The directory appears atomically (staged, then renamed into place).
    void save(const std::filesystem::path& dir) const;
    /// Loaded caches come back sealed.
    static FeatureCache load(const std::filesystem::path& dir);

    friend bool operator==(const FeatureCache& a, const FeatureCache& b) {
        return a.schedule_id_ == b.schedule_id_ && a.backend_id_ == b.backend_id_ && a.entries_ == b.entries_;
    }

private:
    std::string schedule_id_;
    std::string backend_id_;
    std::map<SiteKey, KeyValue> entries_;
    bool sealed_ = false;
};

/// Identity and free-form metadata stored in a feature directory manifest.
struct FeatureDirInfo {
    std::string schedule_id;
    std::string backend_id;
    std::string extra_json;  ///< serialized JSON object, or empty
};

/// Writes/reads per-site K/V maps (caches, cluster means, direction deltas) in
/// the feature directory format.
void save_site_features(const std::filesystem::path& dir, const std::map<SiteKey, KeyValue>& features,
                        const FeatureDirInfo& info);
std::map<SiteKey, KeyValue> load_site_features(const std::filesystem::path& dir, FeatureDirInfo* info = nullptr);

enum class Strategy { none, replace_v, project_v, project_v_mask, project_v_mask_keymod };

const char* to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

struct SarSettings {
    std::shared_ptr<const AgingDirection> direction;
    float w = 0.0f;
};

/// Inclusive range of denoising emission steps.
struct StepRange {
    int first = 0;
    int last = std::numeric_limits<int>::max();

    bool contains(int step) const { return step >= first && step <= last; }
};

struct MixingConfig {
    Strategy strategy = Strategy::none;
    float g = 1.0f;
    bool mask_text = false;
    std::optional<SarSettings> sar;
    StepRange active_steps;
    /// Empty means every declared layer.
    std::set<int> active_layers;
    std::optional<AlphaClamp> alpha_clamp;

    bool active_at(const SiteContext& ctx) const {
        return active_steps.contains(ctx.step) && (active_layers.empty() || active_layers.count(ctx.layer) != 0);
    }
    /// Whether text-token coefficients are pinned to 1 for this strategy.
    bool masks_text() const {
        return mask_text || strategy == Strategy::project_v_mask || strategy == Strategy::project_v_mask_keymod;
    }

    /// Throws ContractError on a non-finite gain or out-of-range active sites.
    void validate(std::size_t steps, std::size_t layers) const;
};

/// Named rung of the ablation ladder.
struct Preset {
    std::string name;
    std::string label;
    Strategy strategy;
    bool mask_text;
    bool sar;
};

/// The five ablation rungs, baseline first.
const std::vector<Preset>& ablation_ladder();
/// Ladder presets plus "none". Also accepts strategy names.
std::optional<Preset> find_preset(std::string_view name);
MixingConfig make_config(const Preset& preset, float g, std::optional<SarSettings> sar = std::nullopt);

struct QKV {
    FeatureBlock q;
    FeatureBlock k;
    FeatureBlock v;
};

/// Editing-branch attention inputs after mixing with the cached inversion
/// features at ctx.site(). Q is always passed through. When cfg.sar is set
/// and the direction has this site, the cached K/V are shifted along it first,
/// on copies, before key modulation and value projection consume them.
QKV apply_strategy(const SiteContext& ctx, const FeatureBlock& q_edit, const FeatureBlock& k_edit,
                   const FeatureBlock& v_edit, const FeatureCache& cache, const MixingConfig& cfg);

/// Sites a hook touched, in call order.
class AuditLog {
public:
    void append(const SiteContext& ctx) {
        std::lock_guard lock(mu_);
        entries_.push_back(ctx);
    }
    std::vector<SiteContext> entries() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

private:
    mutable std::mutex mu_;
    std::vector<SiteContext> entries_;
};

struct HookPair {
    AttentionHook recorder;  ///< inversion: stores predictor-stage K/V into the cache
    AttentionHook mixer;     ///< editing: rewrites K/V through apply_strategy
    std::shared_ptr<AuditLog> recorder_audit;
    std::shared_ptr<AuditLog> mixer_audit;
};

HookPair build_hooks(std::shared_ptr<FeatureCache> cache, MixingConfig cfg);

}  // namespace amk
