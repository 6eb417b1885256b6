// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Reference age clusters and the attention-space aging direction derived from
// them. Cluster images come from an image-generation service, from a
// synthetic seeded stand-in, or from a user directory.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "amk/attention_math.hpp"
#include "amk/backend_adapter.hpp"
#include "amk/rf_engine.hpp"

namespace amk {

enum class ClusterSource { external_service, synthetic, user_supplied };

const char* to_string(ClusterSource s);

struct AgeCluster {
    int age = 0;
    std::vector<std::filesystem::path> images;
    ClusterSource source = ClusterSource::synthetic;
};

/// Age-progression / diversification service.
class ImageGenerationClient {
public:
    virtual ~ImageGenerationClient() = default;
    /// Returns PNG bytes of `input_png` progressed to `age`. Throws on failure.
    virtual std::string generate(const std::string& input_png, int age, std::uint64_t seed) = 0;
};

/// JSON over HTTP: POST {image_b64, age, seed} -> {image_b64}.
class HttpImageGenerationClient final : public ImageGenerationClient {
public:
    HttpImageGenerationClient(std::string endpoint, std::string path = "/generate", int timeout_ms = 60000);

    std::string generate(const std::string& input_png, int age, std::uint64_t seed) override;
    std::size_t requests_sent() const { return requests_.load(); }

private:
    std::string endpoint_;
    std::string path_;
    int timeout_ms_;
    std::atomic<std::size_t> requests_{0};
};

struct ClusterBuildOptions {
    ClusterSource source = ClusterSource::synthetic;
    std::size_t size = 4;
    /// Generated members land in <cache_root>/<input-hash>/<age>/<idx>.png.
    /// For the synthetic source the hash also covers the seed.
    std::filesystem::path cache_root = "cache/sar";
    std::uint64_t seed = 0;
    /// Retries per member for the external service.
    int retries = 2;
    ImageGenerationClient* client = nullptr;
    /// user_supplied: images are read from <user_dir>/<age>/*.png.
    std::filesystem::path user_dir;
    /// synthetic: codec used to perturb the input in latent space.
    const GenerativeBackend* codec = nullptr;
};

/// Content hash used as the cache key for an input image.
std::string input_hash(const std::filesystem::path& input_image);

/// One cluster per requested age. Generated members are cached on disk and
/// reused; a service failure after retries throws IoError listing missing members.
std::vector<AgeCluster> build_clusters(const std::filesystem::path& input_image, const std::vector<int>& ages,
                                       const ClusterBuildOptions& opts);

struct ClusterFeatures {
    int age = 0;
    std::vector<SiteFeatureMap> members;
    SiteFeatureMap mean;
};

/// Inverts every member with an empty prompt, recording K/V at every site,
/// and averages them entrywise. `site_stride` > 1 keeps every n-th grid interval.
ClusterFeatures extract_cluster_features(const AgeCluster& cluster, const GenerativeBackend& backend,
                                         const StepSchedule& schedule, int site_stride = 1);

/// delta = mean(high) - mean(low); bounds recorded as (low.age, high.age).
AgingDirection make_direction(const ClusterFeatures& high, const ClusterFeatures& low);

void save_direction(const std::filesystem::path& dir, const AgingDirection& direction, const std::string& schedule_id,
                    const std::string& backend_id);
AgingDirection load_direction(const std::filesystem::path& dir);

/// Clusters at (age_low, age_high), features, and direction for one input,
/// cached under <cache_root>/<input-hash>/direction-<schedule>-<backend>.
std::shared_ptr<const AgingDirection> build_aging_direction(const std::filesystem::path& input_image,
                                                            const GenerativeBackend& backend,
                                                            const StepSchedule& schedule,
                                                            const ClusterBuildOptions& opts, int age_low = 30,
                                                            int age_high = 70);

}  // namespace amk
