// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/toy_backend.hpp"

#include <algorithm>
#include <any>
#include <cmath>

#include "amk/error.hpp"
#include "amk/png_codec.hpp"
#include "amk/rng.hpp"

namespace amk {

namespace {

std::vector<float> draw(SplitMix64& rng, std::size_t count, float fan_scale) {
    const float s = std::sqrt(3.0f) * fan_scale;
    std::vector<float> w(count);
    for (float& x : w) x = rng.symmetric() * s;
    return w;
}

// y[rows x out] = x[rows x in] * w[in x out]
std::vector<float> matmul(const std::vector<float>& x, std::size_t rows, std::size_t in, const std::vector<float>& w,
                          std::size_t out) {
    std::vector<float> y(rows * out, 0.0f);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x.data() + r * in;
        float* yr = y.data() + r * out;
        for (std::size_t i = 0; i < in; ++i) {
            const float xi = xr[i];
            const float* wi = w.data() + i * out;
            for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wi[o];
        }
    }
    return y;
}

// [tokens, heads*dim] -> [heads, tokens, dim]
FeatureBlock split_heads(const std::vector<float>& x, const TokenLayout& layout) {
    FeatureBlock block(layout);
    const std::size_t n = layout.total_tokens();
    const std::size_t width = layout.heads * layout.head_dim;
    for (std::size_t h = 0; h < layout.heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < layout.head_dim; ++c)
                block.at(h, i, c) = x[i * width + h * layout.head_dim + c];
    return block;
}

}  // namespace

void ToyModelSpec::validate() const {
    AMK_REQUIRE(layers >= 1 && heads >= 1 && head_dim >= 1 && text_tokens >= 1 && image_tokens >= 1,
                "ToyModelSpec: all counts must be >= 1");
}

std::vector<float> embed_prompt(const std::string& text, const ToyModelSpec& spec) {
    const std::size_t count = spec.text_tokens * spec.heads * spec.head_dim;
    if (text.empty()) return std::vector<float>(count, 0.0f);
    SplitMix64 rng(fnv1a64(text));
    std::vector<float> payload(count);
    for (float& x : payload) x = rng.symmetric();
    return payload;
}

ToyBackend::ToyBackend(const ToyModelSpec& spec) : spec_(spec) {
    spec_.validate();
    const std::size_t c = width();
    const std::size_t hidden = 2 * c;
    const float inv_c = 1.0f / std::sqrt(static_cast<float>(c));
    const float inv_hidden = 1.0f / std::sqrt(static_cast<float>(hidden));

    SplitMix64 rng(spec_.seed);
    layers_.resize(spec_.layers);
    for (auto& layer : layers_) {
        layer.wq = draw(rng, c * c, inv_c);
        layer.wk = draw(rng, c * c, inv_c);
        layer.wv = draw(rng, c * c, inv_c);
        layer.wo = draw(rng, c * c, 0.5f * inv_c);
        layer.w1 = draw(rng, c * hidden, inv_c);
        layer.w2 = draw(rng, hidden * c, 0.5f * inv_hidden);
    }
    e1_ = draw(rng, c, 1.0f);
    e2_ = draw(rng, c, 1.0f);
    wout_ = draw(rng, c * c, inv_c);
}

std::string ToyBackend::id() const {
    return "toy-L" + std::to_string(spec_.layers) + "-H" + std::to_string(spec_.heads) + "-D" +
           std::to_string(spec_.head_dim) + "-T" + std::to_string(spec_.text_tokens) + "-I" +
           std::to_string(spec_.image_tokens) + "-s" + std::to_string(spec_.seed);
}

std::vector<std::size_t> ToyBackend::latent_shape() const { return {spec_.image_tokens, width()}; }

TokenLayout ToyBackend::layout() const {
    return TokenLayout{spec_.text_tokens, spec_.image_tokens, spec_.heads, spec_.head_dim};
}

std::vector<AttentionSite> ToyBackend::attention_sites() const {
    std::vector<AttentionSite> sites;
    for (std::size_t l = 0; l < spec_.layers; ++l) sites.push_back({static_cast<int>(l), layout()});
    return sites;
}

Latent ToyBackend::velocity(const Latent& z, double t, const Conditioning& cond, AttentionSink* sink) const {
    AMK_REQUIRE(z.shape == latent_shape(), "toy backend: latent shape mismatch");
    const std::size_t c = width();
    const std::size_t hidden = 2 * c;
    const TokenLayout lay = layout();
    const std::size_t n = lay.total_tokens();
    const std::size_t text = spec_.text_tokens;

    std::vector<float> payload;
    if (const auto* p = std::any_cast<std::vector<float>>(&cond.extra)) {
        AMK_REQUIRE(p->size() == text * c, "toy backend: text payload has ", p->size(), " values, expected ",
                    text * c);
        payload = *p;
    } else {
        payload = embed_prompt(cond.prompt_text, spec_);
    }

    std::vector<float> x(n * c);
    std::copy(payload.begin(), payload.end(), x.begin());
    const float tf = static_cast<float>(t);
    for (std::size_t i = 0; i < spec_.image_tokens; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            x[(text + i) * c + ch] = z.data[i * c + ch] + tf * e1_[ch] + (1.0f - tf) * e2_[ch];

    const float scale = 1.0f / std::sqrt(static_cast<float>(spec_.head_dim));
    std::vector<float> scores(n);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        FeatureBlock q = split_heads(matmul(x, n, c, layer.wq, c), lay);
        FeatureBlock k = split_heads(matmul(x, n, c, layer.wk, c), lay);
        FeatureBlock v = split_heads(matmul(x, n, c, layer.wv, c), lay);
        if (sink) sink->on_attention(static_cast<int>(l), q, k, v);

        std::vector<float> attn(n * c, 0.0f);
        for (std::size_t h = 0; h < spec_.heads; ++h) {
            for (std::size_t i = 0; i < n; ++i) {
                auto qi = q.token(h, i);
                float mx = -INFINITY;
                for (std::size_t j = 0; j < n; ++j) {
                    auto kj = k.token(h, j);
                    float s = 0.0f;
                    for (std::size_t d = 0; d < spec_.head_dim; ++d) s += qi[d] * kj[d];
                    scores[j] = s * scale;
                    mx = std::max(mx, scores[j]);
                }
                float sum = 0.0f;
                for (std::size_t j = 0; j < n; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    sum += scores[j];
                }
                float* dst = attn.data() + i * c + h * spec_.head_dim;
                for (std::size_t j = 0; j < n; ++j) {
                    const float a = scores[j] / sum;
                    auto vj = v.token(h, j);
                    for (std::size_t d = 0; d < spec_.head_dim; ++d) dst[d] += a * vj[d];
                }
            }
        }
        const std::vector<float> proj = matmul(attn, n, c, layer.wo, c);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += proj[i];

        std::vector<float> hid = matmul(x, n, c, layer.w1, hidden);
        for (float& hv : hid) hv = std::tanh(hv);
        const std::vector<float> mlp = matmul(hid, n, hidden, layer.w2, c);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += mlp[i];
    }

    std::vector<float> image(x.begin() + static_cast<std::ptrdiff_t>(text * c), x.end());
    std::vector<float> out = matmul(image, spec_.image_tokens, c, wout_, c);
    for (float& o : out) o *= kToyOutputGain;
    return Latent(latent_shape(), std::move(out));
}

Latent ToyBackend::encode_image_bytes(std::string_view png) const {
    const GrayImage16 img = decode_png(png);
    const std::size_t c = width();
    if (img.width != c || img.height != spec_.image_tokens)
        throw ValidationError("toy backend expects a " + std::to_string(c) + "x" +
                              std::to_string(spec_.image_tokens) + " (width x height) image, got " +
                              std::to_string(img.width) + "x" + std::to_string(img.height));
    Latent z(latent_shape());
    for (std::size_t i = 0; i < z.data.size(); ++i)
        z.data[i] = (static_cast<float>(img.pixels[i]) - 32768.0f) / kToyPixelScale;
    return z;
}

std::string ToyBackend::decode_latent(const Latent& latent) const {
    AMK_REQUIRE(latent.shape == latent_shape(), "toy backend: latent shape mismatch");
    GrayImage16 img;
    img.width = width();
    img.height = spec_.image_tokens;
    img.pixels.resize(latent.data.size());
    for (std::size_t i = 0; i < latent.data.size(); ++i) {
        const float p = std::nearbyint(latent.data[i] * kToyPixelScale) + 32768.0f;
        img.pixels[i] = static_cast<std::uint16_t>(std::clamp(p, 0.0f, 65535.0f));
    }
    return encode_png(img);
}

std::shared_ptr<ToyBackend> build_toy_backend(const ToyModelSpec& spec) { return std::make_shared<ToyBackend>(spec); }

}  // namespace amk
