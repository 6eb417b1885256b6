// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/eval_harness.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "amk/error.hpp"
#include "amk/fs_util.hpp"
#include "amk/png_codec.hpp"
#include "amk/rng.hpp"

namespace amk {

namespace {

using nlohmann::json;

std::vector<float> pixels_unit(std::string_view png) {
    const GrayImage16 img = decode_png(png);
    std::vector<float> x(img.pixels.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(img.pixels[i]) / 32767.5f - 1.0f;
    return x;
}

std::vector<float> random_projection(const std::vector<float>& x, std::size_t dim, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<float> out(dim, 0.0f);
    for (std::size_t o = 0; o < dim; ++o) {
        double acc = 0.0;
        for (float xi : x) acc += static_cast<double>(xi) * rng.gaussian();
        out[o] = static_cast<float>(acc);
    }
    return out;
}

std::size_t display_width(std::string_view s) {
    std::size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++n;
    return n;
}

std::string pad_left(const std::string& s, std::size_t width) {
    const std::size_t w = display_width(s);
    return w >= width ? s : std::string(width - w, ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
    const std::size_t w = display_width(s);
    return w >= width ? s : s + std::string(width - w, ' ');
}

std::string fixed(const std::optional<double>& v, int decimals, const char* missing) {
    if (!v) return missing;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

constexpr const char* kMissing = "\xE2\x80\x94";  // em dash

}  // namespace

std::vector<float> MockTextImageScorer::embed_image(std::string_view png) const {
    return random_projection(pixels_unit(png), dim_, derive_seed(seed_, "mock-clip-image"));
}

std::vector<float> MockTextImageScorer::embed_text(const std::string& text) const {
    SplitMix64 rng(derive_seed(seed_, "mock-clip-text/" + text));
    std::vector<float> out(dim_);
    for (float& x : out) x = rng.gaussian();
    return out;
}

double MockAgeEstimator::predict_age(std::string_view png) const {
    const std::vector<float> x = pixels_unit(png);
    SplitMix64 rng(derive_seed(seed_, "mock-age-estimator"));
    double acc = 0.0;
    for (float xi : x) acc += static_cast<double>(xi) * rng.gaussian();
    return 50.0 + 40.0 * std::tanh(acc / std::sqrt(static_cast<double>(x.size())));
}

std::vector<float> MockFaceEmbedder::embed(std::string_view png) const {
    return random_projection(pixels_unit(png), dim_, derive_seed(seed_, "mock-face-embedder"));
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    AMK_REQUIRE(a.size() == b.size() && !a.empty(), "cosine_similarity: embeddings differ in size or are empty");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<double>(a[i]) * b[i];
        aa += static_cast<double>(a[i]) * a[i];
        bb += static_cast<double>(b[i]) * b[i];
    }
    AMK_REQUIRE(aa > 0.0 && bb > 0.0, "cosine_similarity: zero embedding");
    return ab / std::sqrt(aa * bb);
}

std::optional<double> clip_t(std::string_view image_png, const std::string& prompt, const TextImageScorer* scorer) {
    if (scorer == nullptr) return std::nullopt;
    return cosine_similarity(scorer->embed_image(image_png), scorer->embed_text(prompt));
}

std::optional<double> id_sim(std::string_view image_png, std::span<const std::string> reference_pngs,
                             const FaceEmbedder* embedder) {
    if (embedder == nullptr) return std::nullopt;
    AMK_REQUIRE(!reference_pngs.empty(), "id_sim: at least one reference image is required");
    const std::vector<float> e = embedder->embed(image_png);
    double sum = 0.0;
    for (const auto& ref : reference_pngs) sum += cosine_similarity(e, embedder->embed(ref));
    return sum / static_cast<double>(reference_pngs.size());
}

double age_mae(std::span<const MetricRecord> records) {
    AMK_REQUIRE(!records.empty(), "age_mae: no records");
    double sum = 0.0;
    for (const auto& r : records) {
        AMK_REQUIRE(r.age_pred.has_value(), "age_mae: record '", r.id, "' has no predicted age");
        sum += std::abs(*r.age_pred - r.age_target);
    }
    return sum / static_cast<double>(records.size());
}

std::string to_jsonl(std::span<const MetricRecord> records) {
    std::string out;
    for (const auto& r : records) {
        json j{{"id", r.id}, {"group", r.group}, {"age_target", r.age_target}};
        j["clip_t"] = r.clip_t ? json(*r.clip_t) : json(nullptr);
        j["age_pred"] = r.age_pred ? json(*r.age_pred) : json(nullptr);
        j["id_sim"] = r.id_sim ? json(*r.id_sim) : json(nullptr);
        out += j.dump() + "\n";
    }
    return out;
}

std::vector<MetricRecord> parse_jsonl(std::string_view text) {
    std::vector<MetricRecord> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    auto opt = [](const json& j, const char* key) -> std::optional<double> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        return j[key].get<double>();
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            const json j = json::parse(line);
            MetricRecord r;
            r.id = j.value("id", "");
            r.group = j.value("group", "");
            r.age_target = j.at("age_target").get<double>();
            r.clip_t = opt(j, "clip_t");
            r.age_pred = opt(j, "age_pred");
            r.id_sim = opt(j, "id_sim");
            if (r.id_sim && (*r.id_sim < -1.0 || *r.id_sim > 1.0))
                throw ValidationError("id_sim outside [-1, 1]");
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw IoError("results line " + std::to_string(lineno) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw IoError("results line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<MetricRecord> read_jsonl(const std::filesystem::path& path) { return parse_jsonl(read_file(path)); }

std::vector<ReportRow> summarize(std::span<const MetricRecord> records) {
    struct Acc {
        double clip = 0, age = 0, id = 0;
        std::size_t n_clip = 0, n_age = 0, n_id = 0, n = 0;
    };
    std::vector<std::string> order;
    std::map<std::string, Acc> acc;
    for (const auto& r : records) {
        auto [it, inserted] = acc.try_emplace(r.group);
        if (inserted) order.push_back(r.group);
        Acc& a = it->second;
        ++a.n;
        if (r.clip_t) a.clip += *r.clip_t, ++a.n_clip;
        if (r.age_pred) a.age += std::abs(*r.age_pred - r.age_target), ++a.n_age;
        if (r.id_sim) a.id += *r.id_sim, ++a.n_id;
    }
    std::vector<ReportRow> rows;
    for (const auto& g : order) {
        const Acc& a = acc[g];
        ReportRow row{g, std::nullopt, std::nullopt, std::nullopt, a.n};
        if (a.n_clip) row.clip_t = a.clip / static_cast<double>(a.n_clip);
        if (a.n_age) row.age_mae = a.age / static_cast<double>(a.n_age);
        if (a.n_id) row.id_sim = a.id / static_cast<double>(a.n_id);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string render_text(std::span<const ReportRow> rows) {
    std::size_t label_w = display_width("Method");
    for (const auto& r : rows) label_w = std::max(label_w, display_width(r.label));
    const std::size_t w_clip = 6, w_age = 7, w_id = 6;

    std::string out = pad_right("Method", label_w) + "  " + pad_left("CLIP-T", w_clip) + "  " +
                      pad_left("Age_MAE", w_age) + "  " + pad_left("ID_sim", w_id) + "\n";
    out += std::string(label_w, '-') + "  " + std::string(w_clip, '-') + "  " + std::string(w_age, '-') + "  " +
           std::string(w_id, '-') + "\n";
    for (const auto& r : rows) {
        out += pad_right(r.label, label_w) + "  " + pad_left(fixed(r.clip_t, 3, kMissing), w_clip) + "  " +
               pad_left(fixed(r.age_mae, 1, kMissing), w_age) + "  " + pad_left(fixed(r.id_sim, 2, kMissing), w_id) +
               "\n";
    }
    return out;
}

std::string render_csv(std::span<const ReportRow> rows) {
    std::string out = "method,clip_t,age_mae,id_sim\n";
    for (const auto& r : rows)
        out += csv_field(r.label) + "," + fixed(r.clip_t, 3, "") + "," + fixed(r.age_mae, 1, "") + "," +
               fixed(r.id_sim, 2, "") + "\n";
    return out;
}

}  // namespace amk
