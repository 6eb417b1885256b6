// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/sar_reference.hpp"

#include <algorithm>

#include <json.hpp>

#include "amk/editor.hpp"
#include "amk/error.hpp"
#include "amk/feature_pipeline.hpp"
#include "amk/fs_util.hpp"
#include "amk/http_client.hpp"
#include "amk/png_codec.hpp"
#include "amk/rng.hpp"

namespace amk {

namespace {

using nlohmann::json;

constexpr float kSyntheticAgingAmplitude = 0.4f;
constexpr float kSyntheticMemberNoise = 0.05f;

// Synthetic members depend on the seed as well as the input bytes.
std::string cluster_key(std::string_view input_png, const ClusterBuildOptions& opts) {
    std::uint64_t h = fnv1a64(input_png);
    if (opts.source == ClusterSource::synthetic) h = fnv1a64("synthetic-seed-" + std::to_string(opts.seed), h);
    return to_hex(h);
}

std::string member_name(std::size_t idx) { return std::to_string(idx) + ".png"; }

// Seeded stand-in for age progression: the input latent moved along a fixed
// pseudo-random "aging" pattern in proportion to (age - 50) / 40, plus
// per-member noise.
std::string synthesize_member(const std::string& input_png, int age, std::size_t idx, const std::string& hash,
                              const ClusterBuildOptions& opts) {
    AMK_REQUIRE(opts.codec != nullptr, "synthetic clusters need a backend codec");
    Latent z = opts.codec->encode_image_bytes(input_png);
    SplitMix64 pattern(derive_seed(opts.seed, "sar-aging-pattern"));
    SplitMix64 noise(derive_seed(opts.seed, "sar/" + hash + "/" + std::to_string(age) + "/" + std::to_string(idx)));
    const float progress = (static_cast<float>(age) - 50.0f) / 40.0f;
    for (float& x : z.data) {
        x += kSyntheticAgingAmplitude * progress * pattern.gaussian();
        x += kSyntheticMemberNoise * noise.gaussian();
    }
    return opts.codec->decode_latent(z);
}

void check_shared_resolution(const AgeCluster& cluster) {
    std::size_t w = 0, h = 0;
    for (const auto& img : cluster.images) {
        const GrayImage16 decoded = decode_png(read_file(img));
        if (w == 0) {
            w = decoded.width;
            h = decoded.height;
        } else if (decoded.width != w || decoded.height != h) {
            throw ValidationError("cluster for age " + std::to_string(cluster.age) + " mixes resolutions (" +
                                  img.string() + ")");
        }
    }
}

}  // namespace

const char* to_string(ClusterSource s) {
    switch (s) {
        case ClusterSource::external_service: return "external_service";
        case ClusterSource::synthetic: return "synthetic";
        case ClusterSource::user_supplied: return "user_supplied";
    }
    return "?";
}

HttpImageGenerationClient::HttpImageGenerationClient(std::string endpoint, std::string path, int timeout_ms)
    : endpoint_(std::move(endpoint)), path_(std::move(path)), timeout_ms_(timeout_ms) {}

std::string HttpImageGenerationClient::generate(const std::string& input_png, int age, std::uint64_t seed) {
    const json body{{"image_b64", base64_encode(input_png)}, {"age", age}, {"seed", seed}};
    HttpRequestOptions opts;
    opts.timeout_ms = timeout_ms_;
    ++requests_;
    HttpResponse res = http_post_json(endpoint_, path_, body.dump(), opts);
    if (res.status != 200) throw IoError("image service returned HTTP " + std::to_string(res.status));
    try {
        return base64_decode(json::parse(res.body).at("image_b64").get<std::string>());
    } catch (const json::exception& e) {
        throw IoError(std::string("image service reply malformed: ") + e.what());
    }
}

std::string input_hash(const std::filesystem::path& input_image) { return to_hex(hash_file(input_image)); }

std::vector<AgeCluster> build_clusters(const std::filesystem::path& input_image, const std::vector<int>& ages,
                                       const ClusterBuildOptions& opts) {
    AMK_REQUIRE(!ages.empty(), "build_clusters: no ages requested");
    std::vector<AgeCluster> clusters;

    if (opts.source == ClusterSource::user_supplied) {
        for (int age : ages) {
            const auto dir = opts.user_dir / std::to_string(age);
            if (!std::filesystem::is_directory(dir))
                throw IoError("user-supplied cluster directory missing: " + dir.string());
            AgeCluster cluster{age, {}, ClusterSource::user_supplied};
            for (const auto& entry : std::filesystem::directory_iterator(dir))
                if (entry.is_regular_file() && to_lower(entry.path().extension().string()) == ".png")
                    cluster.images.push_back(entry.path());
            std::sort(cluster.images.begin(), cluster.images.end());
            if (cluster.images.empty()) throw IoError("user-supplied cluster directory has no PNGs: " + dir.string());
            check_shared_resolution(cluster);
            clusters.push_back(std::move(cluster));
        }
        return clusters;
    }

    AMK_REQUIRE(opts.size >= 1, "build_clusters: cluster size must be >= 1");
    if (opts.source == ClusterSource::external_service)
        AMK_REQUIRE(opts.client != nullptr, "build_clusters: external source needs an image-generation client");

    const std::string input_png = read_file(input_image);
    const std::string hash = cluster_key(input_png, opts);
    std::vector<std::string> missing;
    for (int age : ages) {
        AgeCluster cluster{age, {}, opts.source};
        const auto dir = opts.cache_root / hash / std::to_string(age);
        std::filesystem::create_directories(dir);
        for (std::size_t idx = 0; idx < opts.size; ++idx) {
            const auto path = dir / member_name(idx);
            if (!std::filesystem::exists(path)) {
                std::string png;
                if (opts.source == ClusterSource::synthetic) {
                    png = synthesize_member(input_png, age, idx, hash, opts);
                } else {
                    const std::uint64_t seed = derive_seed(opts.seed, std::to_string(age) + "/" + std::to_string(idx));
                    std::string last_error;
                    for (int attempt = 0; attempt <= opts.retries && png.empty(); ++attempt) {
                        try {
                            png = opts.client->generate(input_png, age, seed);
                        } catch (const Error& e) {
                            last_error = e.what();
                        }
                    }
                    if (png.empty()) {
                        missing.push_back("age " + std::to_string(age) + " #" + std::to_string(idx) + " (" +
                                          last_error + ")");
                        continue;
                    }
                }
                atomic_write_file(path, png);
            }
            cluster.images.push_back(path);
        }
        clusters.push_back(std::move(cluster));
    }
    if (!missing.empty()) {
        std::string msg = "image service failed for " + std::to_string(missing.size()) + " cluster member(s):";
        for (const auto& m : missing) msg += " " + m + ";";
        throw IoError(msg);
    }
    for (const auto& c : clusters) check_shared_resolution(c);
    return clusters;
}

ClusterFeatures extract_cluster_features(const AgeCluster& cluster, const GenerativeBackend& backend,
                                         const StepSchedule& schedule, int site_stride) {
    AMK_REQUIRE(!cluster.images.empty(), "extract_cluster_features: cluster for age ", cluster.age, " is empty");
    AMK_REQUIRE(site_stride >= 1, "extract_cluster_features: stride must be >= 1");
    ClusterFeatures out;
    out.age = cluster.age;
    for (const auto& img : cluster.images) {
        const InversionResult inv = invert(backend, backend.encode_image(img), schedule, "");
        SiteFeatureMap features;
        for (const auto& [site, kv] : inv.cache->entries())
            if (site.step % site_stride == 0) features.emplace(site, kv);
        out.members.push_back(std::move(features));
    }
    out.mean = mean_features(out.members);
    return out;
}

AgingDirection make_direction(const ClusterFeatures& high, const ClusterFeatures& low) {
    AgingDirection dir = compute_aging_direction(high.members, low.members);
    dir.age_low = static_cast<float>(low.age);
    dir.age_high = static_cast<float>(high.age);
    return dir;
}

void save_direction(const std::filesystem::path& dir, const AgingDirection& direction, const std::string& schedule_id,
                    const std::string& backend_id) {
    const json extra{{"kind", "aging-direction"}, {"age_low", direction.age_low}, {"age_high", direction.age_high}};
    save_site_features(dir, direction.deltas, FeatureDirInfo{schedule_id, backend_id, extra.dump()});
}

AgingDirection load_direction(const std::filesystem::path& dir) {
    FeatureDirInfo info;
    AgingDirection d;
    d.deltas = load_site_features(dir, &info);
    const json extra = info.extra_json.empty() ? json::object() : json::parse(info.extra_json);
    if (extra.value("kind", "") != "aging-direction")
        throw IoError(dir.string() + " does not hold an aging direction");
    d.age_low = extra.at("age_low").get<float>();
    d.age_high = extra.at("age_high").get<float>();
    return d;
}

std::shared_ptr<const AgingDirection> build_aging_direction(const std::filesystem::path& input_image,
                                                            const GenerativeBackend& backend,
                                                            const StepSchedule& schedule,
                                                            const ClusterBuildOptions& opts, int age_low,
                                                            int age_high) {
    AMK_REQUIRE(age_low < age_high, "build_aging_direction: age_low must be below age_high");
    ClusterBuildOptions o = opts;
    if (o.codec == nullptr) o.codec = &backend;
    std::string key = cluster_key(read_file(input_image), o);
    std::vector<AgeCluster> clusters;
    if (o.source == ClusterSource::user_supplied) {
        // User images can change between runs; fold their contents into the key.
        clusters = build_clusters(input_image, {age_low, age_high}, o);
        std::uint64_t h = fnv1a64(key);
        for (const auto& c : clusters)
            for (const auto& img : c.images) h = fnv1a64(to_hex(hash_file(img)), h);
        key = to_hex(h);
    }
    const auto cached = o.cache_root / key /
                        ("direction-" + std::to_string(age_low) + "-" + std::to_string(age_high) + "-" +
                         schedule.id() + "-" + backend.id() + "-" + to_string(o.source) + "-n" +
                         std::to_string(o.size));
    if (std::filesystem::exists(cached / "manifest.json"))
        return std::make_shared<const AgingDirection>(load_direction(cached));
    if (clusters.empty()) clusters = build_clusters(input_image, {age_low, age_high}, o);
    const ClusterFeatures low = extract_cluster_features(clusters[0], backend, schedule);
    const ClusterFeatures high = extract_cluster_features(clusters[1], backend, schedule);
    auto dir = std::make_shared<AgingDirection>(make_direction(high, low));
    save_direction(cached, *dir, schedule.id(), backend.id());
    return dir;
}

}  // namespace amk
