// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Miniature joint-attention velocity model for desk-scale runs.
//
// Tokens are [text | image], width C = heads * head_dim. The latent is the
// image token matrix [image_tokens, C]. Per layer:
//
//   Q, K, V = X Wq, X Wk, X Wv           (hooked here, split into heads)
//   X += concat_h(softmax(Q K^T / sqrt(d)) V) Wo
//   X += tanh(X W1) W2                   (hidden width 2C)
//
// Image tokens enter as z + t * e1 + (1 - t) * e2; the velocity is
// kOutputGain * X_image Wout.
//
// Weights come from SplitMix64(seed) in this order: for each layer Wq, Wk,
// Wv, Wo, W1, W2 (row-major, input dim major); then e1, e2, Wout. Each draw
// is symmetric() * sqrt(3) * fan_scale, where fan_scale is 1/sqrt(fan_in)
// (halved for Wo and W2).
//
// Images are 16-bit gray PNGs of C x image_tokens pixels with
// latent = (pixel - 32768) / 4096, so encode(decode(image)) is exact.

#pragma once

#include <string>
#include <vector>

#include "amk/backend_adapter.hpp"

namespace amk {

inline constexpr float kToyPixelScale = 4096.0f;
inline constexpr float kToyOutputGain = 0.5f;

/// Text-token payload: text_tokens x (heads * head_dim) values in [-1, 1),
/// seeded by the FNV-1a hash of the text. The empty string maps to zeros.
std::vector<float> embed_prompt(const std::string& text, const ToyModelSpec& spec);

class ToyBackend final : public GenerativeBackend {
public:
    explicit ToyBackend(const ToyModelSpec& spec);

    const ToyModelSpec& spec() const { return spec_; }

    std::string id() const override;
    std::vector<std::size_t> latent_shape() const override;
    std::vector<AttentionSite> attention_sites() const override;
    /// Uses std::vector<float> from cond.extra as the text payload when present,
    /// otherwise embed_prompt(cond.prompt_text).
    Latent velocity(const Latent& z, double t, const Conditioning& cond, AttentionSink* sink) const override;

    Latent encode_image_bytes(std::string_view png) const override;
    std::string decode_latent(const Latent& latent) const override;

private:
    struct Layer {
        std::vector<float> wq, wk, wv, wo, w1, w2;
    };

    std::size_t width() const { return spec_.heads * spec_.head_dim; }
    TokenLayout layout() const;

    ToyModelSpec spec_;
    std::vector<Layer> layers_;
    std::vector<float> e1_, e2_, wout_;
};

std::shared_ptr<ToyBackend> build_toy_backend(const ToyModelSpec& spec);

}  // namespace amk
