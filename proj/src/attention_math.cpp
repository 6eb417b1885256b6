// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/attention_math.hpp"

#include <algorithm>
#include <cmath>

#include "amk/error.hpp"

namespace amk {

namespace {

void require_same_layout(const FeatureBlock& a, const FeatureBlock& b, const char* op) {
    AMK_REQUIRE(a.layout() == b.layout() && a.size() == b.size(), op, ": feature blocks have mismatched layouts");
}

float dot(std::span<const float> a, std::span<const float> b) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < a.size(); ++c) acc += a[c] * b[c];
    return acc;
}

// out = a + w * b, elementwise.
FeatureBlock axpy(const FeatureBlock& a, const FeatureBlock& b, float w) {
    FeatureBlock out = a;
    auto dst = out.values();
    auto src = b.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
    return out;
}

}  // namespace

void TokenLayout::validate() const {
    AMK_REQUIRE(text_tokens >= 1 && image_tokens >= 1 && heads >= 1 && head_dim >= 1,
                "TokenLayout counts must all be >= 1 (text=", text_tokens, ", image=", image_tokens,
                ", heads=", heads, ", head_dim=", head_dim, ")");
}

FeatureBlock::FeatureBlock(const TokenLayout& layout, float fill) : layout_(layout) {
    layout_.validate();
    values_.assign(layout_.block_size(), fill);
}

FeatureBlock::FeatureBlock(const TokenLayout& layout, std::vector<float> values)
    : layout_(layout), values_(std::move(values)) {
    layout_.validate();
    AMK_REQUIRE(values_.size() == layout_.block_size(), "FeatureBlock: expected ", layout_.block_size(),
                " values for layout, got ", values_.size());
}

bool FeatureBlock::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](float x) { return std::isfinite(x); });
}

AlphaField::AlphaField(const TokenLayout& layout, float fill) : layout_(layout) {
    layout_.validate();
    alpha_.assign(layout_.heads * layout_.total_tokens(), fill);
}

AlphaField compute_alpha(const FeatureBlock& v_inv, const FeatureBlock& v_edit) {
    require_same_layout(v_inv, v_edit, "compute_alpha");
    const TokenLayout& layout = v_edit.layout();
    AlphaField alpha(layout);
    for (std::size_t h = 0; h < layout.heads; ++h) {
        for (std::size_t i = 0; i < layout.total_tokens(); ++i) {
            auto e = v_edit.token(h, i);
            const float norm_sq = dot(e, e);
            alpha.at(h, i) = norm_sq <= kDegenerateNormSq ? 1.0f : dot(v_inv.token(h, i), e) / norm_sq;
        }
    }
    return alpha;
}

AlphaField mask_text_alpha(AlphaField alpha) {
    const TokenLayout& layout = alpha.layout();
    for (std::size_t h = 0; h < layout.heads; ++h)
        for (std::size_t i = 0; i < layout.text_tokens; ++i) alpha.at(h, i) = 1.0f;
    return alpha;
}

AlphaField clamp_alpha(AlphaField alpha, const AlphaClamp& clamp) {
    AMK_REQUIRE(clamp.min <= clamp.max, "alpha clamp: min ", clamp.min, " exceeds max ", clamp.max);
    const TokenLayout& layout = alpha.layout();
    for (std::size_t h = 0; h < layout.heads; ++h)
        for (std::size_t i = 0; i < layout.total_tokens(); ++i)
            alpha.at(h, i) = std::clamp(alpha.at(h, i), clamp.min, clamp.max);
    return alpha;
}

FeatureBlock project_value(const FeatureBlock& v_inv, const FeatureBlock& v_edit, bool mask_text,
                           const std::optional<AlphaClamp>& clamp) {
    AlphaField alpha = compute_alpha(v_inv, v_edit);
    if (clamp) alpha = clamp_alpha(std::move(alpha), *clamp);
    // Masking after the clamp keeps text coefficients at exactly 1.
    if (mask_text) alpha = mask_text_alpha(std::move(alpha));

    const TokenLayout& layout = v_edit.layout();
    FeatureBlock out(layout);
    for (std::size_t h = 0; h < layout.heads; ++h) {
        for (std::size_t i = 0; i < layout.total_tokens(); ++i) {
            const float a = alpha.at(h, i);
            auto src = v_edit.token(h, i);
            auto dst = out.token(h, i);
            for (std::size_t c = 0; c < layout.head_dim; ++c) dst[c] = a * src[c];
        }
    }
    return out;
}

std::vector<std::vector<float>> key_alignment(const FeatureBlock& k_edit, const FeatureBlock& k_inv) {
    require_same_layout(k_edit, k_inv, "key_alignment");
    const TokenLayout& layout = k_edit.layout();
    const std::size_t n = layout.total_tokens();
    const float scale = 1.0f / std::sqrt(static_cast<float>(layout.head_dim));

    std::vector<std::vector<float>> per_head(layout.heads, std::vector<float>(n * n));
    for (std::size_t h = 0; h < layout.heads; ++h) {
        auto& a = per_head[h];
        for (std::size_t i = 0; i < n; ++i) {
            float* row = a.data() + i * n;
            float row_max = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = dot(k_edit.token(h, i), k_inv.token(h, j)) * scale;
                row_max = std::max(row_max, row[j]);
            }
            float sum = 0.0f;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - row_max);
                sum += row[j];
            }
            for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
        }
    }
    return per_head;
}

FeatureBlock modulate_key(const FeatureBlock& k_edit, const FeatureBlock& k_inv, float g) {
    AMK_REQUIRE(std::isfinite(g), "modulate_key: gain g must be finite");
    const auto align = key_alignment(k_edit, k_inv);
    const TokenLayout& layout = k_edit.layout();
    const std::size_t n = layout.total_tokens();

    FeatureBlock out = k_edit;
    std::vector<float> mixed(layout.head_dim);
    for (std::size_t h = 0; h < layout.heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            std::fill(mixed.begin(), mixed.end(), 0.0f);
            const float* row = align[h].data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                auto kj = k_inv.token(h, j);
                for (std::size_t c = 0; c < layout.head_dim; ++c) mixed[c] += row[j] * kj[c];
            }
            auto dst = out.token(h, i);
            for (std::size_t c = 0; c < layout.head_dim; ++c) dst[c] += g * mixed[c];
        }
    }
    return out;
}

SiteFeatureMap mean_features(std::span<const SiteFeatureMap> members) {
    AMK_REQUIRE(!members.empty(), "mean_features: cluster is empty");
    const SiteFeatureMap& first = members.front();
    for (const auto& m : members) {
        AMK_REQUIRE(m.size() == first.size(), "mean_features: cluster members have different site sets");
        for (const auto& [site, kv] : first) {
            auto it = m.find(site);
            AMK_REQUIRE(it != m.end(), "mean_features: site (step ", site.step, ", layer ", site.layer,
                        ") missing from a cluster member");
            AMK_REQUIRE(it->second.k.layout() == kv.k.layout() && it->second.v.layout() == kv.v.layout(),
                        "mean_features: layout mismatch at site (step ", site.step, ", layer ", site.layer, ")");
        }
    }

    const float inv_count = 1.0f / static_cast<float>(members.size());
    SiteFeatureMap mean;
    for (const auto& [site, kv] : first) {
        FeatureBlock k(kv.k.layout());
        FeatureBlock v(kv.v.layout());
        for (const auto& m : members) {
            const KeyValue& src = m.at(site);
            auto ks = src.k.values();
            auto vs = src.v.values();
            auto kd = k.values();
            auto vd = v.values();
            for (std::size_t i = 0; i < kd.size(); ++i) kd[i] += ks[i];
            for (std::size_t i = 0; i < vd.size(); ++i) vd[i] += vs[i];
        }
        for (float& x : k.values()) x *= inv_count;
        for (float& x : v.values()) x *= inv_count;
        mean.emplace(site, KeyValue{std::move(k), std::move(v)});
    }
    return mean;
}

AgingDirection compute_aging_direction(std::span<const SiteFeatureMap> old_cluster,
                                       std::span<const SiteFeatureMap> young_cluster) {
    AMK_REQUIRE(!old_cluster.empty() && !young_cluster.empty(), "compute_aging_direction: empty cluster");
    const SiteFeatureMap old_mean = mean_features(old_cluster);
    const SiteFeatureMap young_mean = mean_features(young_cluster);
    AMK_REQUIRE(old_mean.size() == young_mean.size(), "compute_aging_direction: clusters cover different sites");

    AgingDirection dir;
    for (const auto& [site, old_kv] : old_mean) {
        auto it = young_mean.find(site);
        AMK_REQUIRE(it != young_mean.end(), "compute_aging_direction: site (step ", site.step, ", layer ",
                    site.layer, ") missing from the young cluster");
        require_same_layout(old_kv.k, it->second.k, "compute_aging_direction");
        require_same_layout(old_kv.v, it->second.v, "compute_aging_direction");
        dir.deltas.emplace(site, KeyValue{axpy(old_kv.k, it->second.k, -1.0f), axpy(old_kv.v, it->second.v, -1.0f)});
    }
    return dir;
}

float age_weight(float age_target, float age_low, float age_high, bool clamp) {
    AMK_REQUIRE(age_low < age_high, "age_weight: age_low (", age_low, ") must be below age_high (", age_high, ")");
    const float w = (age_target - age_low) / (age_high - age_low);
    return clamp ? std::clamp(w, 0.0f, 1.0f) : w;
}

std::pair<FeatureBlock, FeatureBlock> apply_aging_direction(const FeatureBlock& k_inv, const FeatureBlock& v_inv,
                                                            const KeyValue& delta, float w) {
    require_same_layout(k_inv, delta.k, "apply_aging_direction");
    require_same_layout(v_inv, delta.v, "apply_aging_direction");
    return {axpy(k_inv, delta.k, w), axpy(v_inv, delta.v, w)};
}

}  // namespace amk
