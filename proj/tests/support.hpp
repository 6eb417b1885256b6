// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the unit and acceptance tests: random instances,
// double-precision reference implementations, temp directories, toy images.

#pragma once

#include <stdlib.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "amk/attention_math.hpp"
#include "amk/backend_adapter.hpp"
#include "amk/png_codec.hpp"
#include "amk/rf_engine.hpp"

namespace amk::test {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "amk-test-XXXXXX").string();
        path_ = ::mkdtemp(tmpl.data());
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Small layout within heads <= 4, tokens <= 8, head_dim <= 8.
inline TokenLayout random_layout(Rng& rng) {
    TokenLayout l;
    l.heads = pick(rng, 1, 4);
    l.text_tokens = pick(rng, 1, 4);
    l.image_tokens = pick(rng, 1, 8 - l.text_tokens);
    l.head_dim = pick(rng, 1, 8);
    return l;
}

inline FeatureBlock random_block(const TokenLayout& l, Rng& rng, double scale = 1.0) {
    std::vector<float> v(l.block_size());
    for (float& x : v) x = static_cast<float>(uniform(rng, -scale, scale));
    return FeatureBlock(l, std::move(v));
}

/// Every token row has squared norm at least min_norm_sq.
inline FeatureBlock random_nondegenerate_block(const TokenLayout& l, Rng& rng, double min_norm_sq = 0.05) {
    for (;;) {
        FeatureBlock b = random_block(l, rng);
        bool ok = true;
        for (std::size_t h = 0; h < l.heads && ok; ++h)
            for (std::size_t i = 0; i < l.total_tokens() && ok; ++i) {
                double n = 0;
                for (float x : b.token(h, i)) n += double(x) * x;
                ok = n >= min_norm_sq;
            }
        if (ok) return b;
    }
}

// Reference implementations, written independently of the library and
// evaluated in double.
namespace oracle {

inline std::vector<double> alpha(const FeatureBlock& v_inv, const FeatureBlock& v_edit) {
    const TokenLayout& l = v_edit.layout();
    std::vector<double> out;
    for (std::size_t h = 0; h < l.heads; ++h)
        for (std::size_t i = 0; i < l.total_tokens(); ++i) {
            double num = 0, den = 0;
            for (std::size_t c = 0; c < l.head_dim; ++c) {
                num += double(v_inv.at(h, i, c)) * v_edit.at(h, i, c);
                den += double(v_edit.at(h, i, c)) * v_edit.at(h, i, c);
            }
            out.push_back(den <= 1e-12 ? 1.0 : num / den);
        }
    return out;
}

inline std::vector<double> project(const FeatureBlock& v_inv, const FeatureBlock& v_edit, bool mask_text) {
    const TokenLayout& l = v_edit.layout();
    const auto a = alpha(v_inv, v_edit);
    std::vector<double> out;
    for (std::size_t h = 0; h < l.heads; ++h)
        for (std::size_t i = 0; i < l.total_tokens(); ++i) {
            const double ai = (mask_text && i < l.text_tokens) ? 1.0 : a[h * l.total_tokens() + i];
            for (std::size_t c = 0; c < l.head_dim; ++c) out.push_back(ai * v_edit.at(h, i, c));
        }
    return out;
}

/// Softmax rows of k_edit k_inv^T / sqrt(d), per head.
inline std::vector<std::vector<double>> alignment(const FeatureBlock& k_edit, const FeatureBlock& k_inv) {
    const TokenLayout& l = k_edit.layout();
    const std::size_t n = l.total_tokens();
    std::vector<std::vector<double>> out(l.heads, std::vector<double>(n * n));
    for (std::size_t h = 0; h < l.heads; ++h)
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> s(n);
            for (std::size_t j = 0; j < n; ++j) {
                double d = 0;
                for (std::size_t c = 0; c < l.head_dim; ++c) d += double(k_edit.at(h, i, c)) * k_inv.at(h, j, c);
                s[j] = d / std::sqrt(double(l.head_dim));
            }
            double sum = 0;
            for (double x : s) sum += std::exp(x);
            for (std::size_t j = 0; j < n; ++j) out[h][i * n + j] = std::exp(s[j]) / sum;
        }
    return out;
}

inline std::vector<double> modulate(const FeatureBlock& k_edit, const FeatureBlock& k_inv, double g) {
    const TokenLayout& l = k_edit.layout();
    const std::size_t n = l.total_tokens();
    const auto a = alignment(k_edit, k_inv);
    std::vector<double> out;
    for (std::size_t h = 0; h < l.heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < l.head_dim; ++c) {
                double m = 0;
                for (std::size_t j = 0; j < n; ++j) m += a[h][i * n + j] * k_inv.at(h, j, c);
                out.push_back(k_edit.at(h, i, c) + g * m);
            }
    return out;
}

/// mean(old) - mean(young) for one block position.
inline std::vector<double> direction(const std::vector<FeatureBlock>& old_members,
                                     const std::vector<FeatureBlock>& young_members) {
    const std::size_t n = old_members.front().size();
    std::vector<double> out(n, 0.0);
    for (const auto& b : old_members)
        for (std::size_t i = 0; i < n; ++i) out[i] += double(b.values()[i]) / old_members.size();
    for (const auto& b : young_members)
        for (std::size_t i = 0; i < n; ++i) out[i] -= double(b.values()[i]) / young_members.size();
    return out;
}

inline double weight(double target, double low, double high) { return (target - low) / (high - low); }

inline std::vector<double> shift(const FeatureBlock& base, const FeatureBlock& delta, double w) {
    std::vector<double> out;
    for (std::size_t i = 0; i < base.size(); ++i) out.push_back(double(base.values()[i]) + w * delta.values()[i]);
    return out;
}

}  // namespace oracle

template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
    double m = 0;
    auto ia = std::begin(a);
    for (auto ib = std::begin(b); ib != std::end(b); ++ia, ++ib) m = std::max(m, std::abs(double(*ia) - double(*ib)));
    return m;
}

/// v(z, t) = a * z + b elementwise, with `layers` attention sites whose
/// blocks carry a copy of the first latent values. Closed form from t0:
/// z(t) = (z0 + b/a) * exp(a * (t - t0)) - b/a.
class LinearBackend final : public VelocityBackend {
public:
    LinearBackend(double a, double b, std::size_t n = 4, int layers = 2) : a_(a), b_(b), n_(n), layers_(layers) {}
    std::string id() const override { return "linear"; }
    std::vector<std::size_t> latent_shape() const override { return {n_}; }
    std::vector<AttentionSite> attention_sites() const override {
        std::vector<AttentionSite> out;
        for (int l = 0; l < layers_; ++l) out.push_back(AttentionSite{l, layout()});
        return out;
    }
    Latent velocity(const Latent& z, double, const Conditioning&, AttentionSink* sink) const override {
        if (sink) {
            for (int l = 0; l < layers_; ++l) {
                FeatureBlock q(layout(), z.data[0]), k(layout(), z.data[0]), v(layout(), z.data[0]);
                sink->on_attention(l, q, k, v);
            }
        }
        Latent out(z.shape);
        for (std::size_t i = 0; i < z.size(); ++i) out.data[i] = static_cast<float>(a_ * z.data[i] + b_);
        return out;
    }
    double exact(double z0, double t0, double t1) const { return (z0 + b_ / a_) * std::exp(a_ * (t1 - t0)) - b_ / a_; }

private:
    static TokenLayout layout() { return TokenLayout{1, 1, 1, 2}; }
    double a_, b_;
    std::size_t n_;
    int layers_;
};

inline ToyModelSpec small_toy(std::uint64_t seed = 7) {
    ToyModelSpec s;
    s.seed = seed;
    return s;
}

/// Smooth 16-bit gray test image matching the toy backend's resolution.
inline std::string toy_png(const ToyModelSpec& spec, std::uint64_t seed = 1) {
    GrayImage16 img;
    img.width = spec.heads * spec.head_dim;
    img.height = spec.image_tokens;
    Rng rng(seed);
    const double fx = uniform(rng, 0.5, 2.0), fy = uniform(rng, 0.5, 2.0), ph = uniform(rng, 0, 6.28);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            const double v = std::sin(fx * x * 0.4 + ph) * std::cos(fy * y * 0.3) + uniform(rng, -0.1, 0.1);
            img.pixels.push_back(static_cast<std::uint16_t>(32768 + 4096 * v));
        }
    return encode_png(img);
}

}  // namespace amk::test
