// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Edit-quality metrics behind pluggable model adapters, and the grouped
// CLIP-T / Age_MAE / ID_sim report.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace amk {

/// Image-text embedding model (CLIP-like).
class TextImageScorer {
public:
    virtual ~TextImageScorer() = default;
    virtual std::vector<float> embed_image(std::string_view png) const = 0;
    virtual std::vector<float> embed_text(const std::string& text) const = 0;
};

class AgeEstimator {
public:
    virtual ~AgeEstimator() = default;
    virtual double predict_age(std::string_view png) const = 0;
};

/// Face-identity embedding model (ArcFace-like).
class FaceEmbedder {
public:
    virtual ~FaceEmbedder() = default;
    virtual std::vector<float> embed(std::string_view png) const = 0;
};

/// Deterministic stand-ins: seeded random projections of the 16-bit gray
/// pixels (and of a hashed text code). They make the pipeline measurable at
/// desk scale; the numbers carry no perceptual meaning.
class MockTextImageScorer final : public TextImageScorer {
public:
    explicit MockTextImageScorer(std::uint64_t seed = 0, std::size_t dim = 32) : seed_(seed), dim_(dim) {}
    std::vector<float> embed_image(std::string_view png) const override;
    std::vector<float> embed_text(const std::string& text) const override;

private:
    std::uint64_t seed_;
    std::size_t dim_;
};

class MockAgeEstimator final : public AgeEstimator {
public:
    explicit MockAgeEstimator(std::uint64_t seed = 0) : seed_(seed) {}
    /// 50 + 40 * tanh(<pixels, pattern> / sqrt(n)), pixels scaled to [-1, 1].
    double predict_age(std::string_view png) const override;

private:
    std::uint64_t seed_;
};

class MockFaceEmbedder final : public FaceEmbedder {
public:
    explicit MockFaceEmbedder(std::uint64_t seed = 0, std::size_t dim = 64) : seed_(seed), dim_(dim) {}
    std::vector<float> embed(std::string_view png) const override;

private:
    std::uint64_t seed_;
    std::size_t dim_;
};

/// Accumulated in double. Throws ContractError on size mismatch or a zero vector.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Cosine between image and prompt embeddings; empty when no scorer is configured.
std::optional<double> clip_t(std::string_view image_png, const std::string& prompt, const TextImageScorer* scorer);

/// Mean cosine between the image and each reference; empty when no embedder is configured.
std::optional<double> id_sim(std::string_view image_png, std::span<const std::string> reference_pngs,
                             const FaceEmbedder* embedder);

struct MetricRecord {
    std::string id;
    std::string group;
    std::optional<double> clip_t;
    std::optional<double> age_pred;
    double age_target = 0.0;
    std::optional<double> id_sim;

    friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

/// Mean |age_pred - age_target|. Throws ContractError on an empty set or a
/// record without a prediction.
double age_mae(std::span<const MetricRecord> records);

/// Line-delimited JSON, one record per line.
std::string to_jsonl(std::span<const MetricRecord> records);
std::vector<MetricRecord> parse_jsonl(std::string_view text);
std::vector<MetricRecord> read_jsonl(const std::filesystem::path& path);

struct ReportRow {
    std::string label;
    std::optional<double> clip_t;
    std::optional<double> age_mae;
    std::optional<double> id_sim;
    std::size_t count = 0;
};

/// One row per group, in order of first appearance. Each metric averages the
/// records that carry it; a group with none renders as missing.
std::vector<ReportRow> summarize(std::span<const MetricRecord> records);

/// Aligned table. CLIP-T to 3 decimals, Age_MAE to 1, ID_sim to 2; missing as U+2014.
std::string render_text(std::span<const ReportRow> rows);
/// method,clip_t,age_mae,id_sim with the same precision; missing cells empty.
std::string render_csv(std::span<const ReportRow> rows);

}  // namespace amk
