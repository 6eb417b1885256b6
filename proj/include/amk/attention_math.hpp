// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Attention-feature formulas used by the editing pipeline: value projection,
// text-channel masking, key modulation and the simulated-aging direction.
// Everything here is a pure function over 32-bit blocks; no model, no I/O.

#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace amk {

/// Token split of one joint attention site. Text tokens come first.
struct TokenLayout {
    std::size_t text_tokens = 1;
    std::size_t image_tokens = 1;
    std::size_t heads = 1;
    std::size_t head_dim = 1;

    std::size_t total_tokens() const { return text_tokens + image_tokens; }
    std::size_t block_size() const { return heads * total_tokens() * head_dim; }
    bool is_text(std::size_t token) const { return token < text_tokens; }

    /// Throws ContractError when any count is zero.
    void validate() const;

    friend bool operator==(const TokenLayout&, const TokenLayout&) = default;
};

/// Q, K or V of one attention site, laid out [heads, total_tokens, head_dim].
class FeatureBlock {
public:
    FeatureBlock() = default;
    explicit FeatureBlock(const TokenLayout& layout, float fill = 0.0f);
    FeatureBlock(const TokenLayout& layout, std::vector<float> values);

    const TokenLayout& layout() const { return layout_; }
    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }
    std::size_t size() const { return values_.size(); }

    float& at(std::size_t head, std::size_t token, std::size_t channel) {
        return values_[index(head, token, channel)];
    }
    float at(std::size_t head, std::size_t token, std::size_t channel) const {
        return values_[index(head, token, channel)];
    }

    /// The head_dim channels of one token in one head.
    std::span<float> token(std::size_t head, std::size_t token) {
        return std::span<float>(values_).subspan(index(head, token, 0), layout_.head_dim);
    }
    std::span<const float> token(std::size_t head, std::size_t token) const {
        return std::span<const float>(values_).subspan(index(head, token, 0), layout_.head_dim);
    }

    bool all_finite() const;

    friend bool operator==(const FeatureBlock&, const FeatureBlock&) = default;

private:
    std::size_t index(std::size_t head, std::size_t token, std::size_t channel) const {
        return (head * layout_.total_tokens() + token) * layout_.head_dim + channel;
    }

    TokenLayout layout_{};
    std::vector<float> values_;
};

/// One projection coefficient per (head, token).
class AlphaField {
public:
    AlphaField() = default;
    explicit AlphaField(const TokenLayout& layout, float fill = 1.0f);

    const TokenLayout& layout() const { return layout_; }
    float& at(std::size_t head, std::size_t token) { return alpha_[head * layout_.total_tokens() + token]; }
    float at(std::size_t head, std::size_t token) const { return alpha_[head * layout_.total_tokens() + token]; }
    std::span<const float> values() const { return alpha_; }

    friend bool operator==(const AlphaField&, const AlphaField&) = default;

private:
    TokenLayout layout_{};
    std::vector<float> alpha_;
};

/// Attention site on the integration grid: grid interval index plus layer index.
struct SiteKey {
    int step = 0;
    int layer = 0;

    friend auto operator<=>(const SiteKey&, const SiteKey&) = default;
};

struct KeyValue {
    FeatureBlock k;
    FeatureBlock v;

    friend bool operator==(const KeyValue&, const KeyValue&) = default;
};

/// Per-site K/V features of one image.
using SiteFeatureMap = std::map<SiteKey, KeyValue>;

/// Attention-space aging direction: per-site (delta_k, delta_v) plus the
/// ages of the clusters it was computed from. Holding both deltas in one
/// entry keeps their key sets identical.
struct AgingDirection {
    std::map<SiteKey, KeyValue> deltas;
    float age_low = 30.0f;
    float age_high = 70.0f;

    const KeyValue* find(const SiteKey& site) const {
        auto it = deltas.find(site);
        return it == deltas.end() ? nullptr : &it->second;
    }
};

struct AlphaClamp {
    float min = -1.0f;
    float max = 1.0f;
};

/// Squared norms at or below this count as a degenerate edit token (alpha := 1).
inline constexpr float kDegenerateNormSq = 1e-12f;

AlphaField compute_alpha(const FeatureBlock& v_inv, const FeatureBlock& v_edit);

/// Forces alpha to exactly 1 on every text token; image tokens pass through.
AlphaField mask_text_alpha(AlphaField alpha);

AlphaField clamp_alpha(AlphaField alpha, const AlphaClamp& clamp);

/// V_proj[h,i,:] = alpha[h,i] * v_edit[h,i,:]. With mask_text the text-token
/// coefficients are 1, so those rows are v_edit unchanged.
FeatureBlock project_value(const FeatureBlock& v_inv, const FeatureBlock& v_edit, bool mask_text,
                           const std::optional<AlphaClamp>& clamp = std::nullopt);

/// Row-stochastic alignment per head: softmax over the inversion-token axis of
/// k_edit * k_inv^T / sqrt(head_dim). Returned as heads matrices of
/// [total_tokens, total_tokens], row-major.
std::vector<std::vector<float>> key_alignment(const FeatureBlock& k_edit, const FeatureBlock& k_inv);

/// K_mod = k_edit + g * (A * k_inv) with A from key_alignment().
FeatureBlock modulate_key(const FeatureBlock& k_edit, const FeatureBlock& k_inv, float g);

/// Entrywise mean of per-image features. All members must share sites and layouts.
SiteFeatureMap mean_features(std::span<const SiteFeatureMap> members);

/// delta = mean(old) - mean(young) for K and V at every site. The age
/// bounds are left at their defaults; callers that know the cluster ages set them.
AgingDirection compute_aging_direction(std::span<const SiteFeatureMap> old_cluster,
                                       std::span<const SiteFeatureMap> young_cluster);

/// (target - low) / (high - low). Unclamped unless clamp is set, in which case
/// the result is limited to [0, 1].
float age_weight(float age_target, float age_low, float age_high, bool clamp = false);

/// Returns (k_inv + w * delta.k, v_inv + w * delta.v); the inputs are untouched.
std::pair<FeatureBlock, FeatureBlock> apply_aging_direction(const FeatureBlock& k_inv, const FeatureBlock& v_inv,
                                                            const KeyValue& delta, float w);

}  // namespace amk
