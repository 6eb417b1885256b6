// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Aging tree on disk:
//
//   <dir>/manifest.json           versioned, rewritten atomically
//   <dir>/images/<node-id>.png
//   <dir>/features/<node-id>/     recorded inversion of that node's image
//   <dir>/cache/sar/...           reference clusters and aging directions
//
// Every branch is an edit job whose state (pending, running, done, failed)
// is persisted on its node.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "amk/backend_adapter.hpp"
#include "amk/eval_harness.hpp"
#include "amk/prompt_refiner.hpp"
#include "amk/sar_reference.hpp"

namespace amk {

inline constexpr int kManifestVersion = 1;

enum class JobState { pending, running, done, failed };

const char* to_string(JobState s);
std::optional<JobState> parse_job_state(std::string_view s);

struct NodeMetrics {
    std::optional<double> clip_t;
    std::optional<double> age_mae_contrib;
    std::optional<double> id_sim;
};

/// Per-branch overrides of the tree's edit settings.
struct BranchOverrides {
    std::optional<std::string> preset;
    std::optional<float> g;
};

struct MultiverseNode {
    std::string id;
    std::optional<std::string> parent_id;
    int age = 0;
    std::string condition;
    std::string refined_prompt;
    std::string image_ref;  ///< relative to the tree directory
    std::optional<NodeMetrics> metrics;
    std::string created_at;
    JobState job_state = JobState::pending;
    std::string error;
    BranchOverrides overrides;
    /// Fields this version does not know about; written back untouched.
    nlohmann::json unknown = nlohmann::json::object();
};

struct TreeSettings {
    std::uint64_t seed = 0;
    std::size_t steps = 30;
    float g = 1.0f;
    std::string preset = "full";
    /// false: a branch edits its parent's image; true: always the root image.
    bool from_root = false;
    /// Prompt describing the root image during inversion; defaults to subject_desc.
    std::string source_prompt;
    ClusterSource sar_source = ClusterSource::synthetic;
    std::string image_service_url;  ///< external_service source
    std::string sar_user_dir;       ///< user_supplied source
    std::size_t cluster_size = 4;
    int sar_age_low = 30;
    int sar_age_high = 70;
    std::string refine_mode = "template";
};

struct TreeManifest {
    int version = kManifestVersion;
    std::string subject_desc;
    std::string backend;
    TreeSettings settings;
    std::vector<MultiverseNode> nodes;
    nlohmann::json unknown = nlohmann::json::object();

    const MultiverseNode* find(std::string_view id) const;
    MultiverseNode* find(std::string_view id);
    const MultiverseNode& root() const;
    /// Ids of `id` and all of its descendants, parents before children.
    std::vector<std::string> subtree(std::string_view id) const;

    /// Throws ContractError unless the nodes form a single rooted tree with
    /// unique ids, existing parents, no cycles and a condition-free root.
    void validate() const;

    nlohmann::json to_json() const;
    /// Throws IoError on malformed, newer-version or structurally invalid input.
    static TreeManifest from_json(const nlohmann::json& j);
};

/// Metric adapters attached to generated nodes; any may be null.
struct MetricAdapters {
    std::shared_ptr<const TextImageScorer> scorer;
    std::shared_ptr<const AgeEstimator> age_estimator;
    std::shared_ptr<const FaceEmbedder> face_embedder;
};

/// Thread-safe handle on one tree directory.
class MultiverseTree {
public:
    /// Copies the image in as the root. Refuses to overwrite an existing tree.
    static std::unique_ptr<MultiverseTree> create(const std::filesystem::path& dir,
                                                  const std::filesystem::path& input_image,
                                                  const std::string& subject_desc, int root_age,
                                                  const TreeSettings& settings, const GenerativeBackend& backend);
    static std::unique_ptr<MultiverseTree> open(const std::filesystem::path& dir);

    const std::filesystem::path& dir() const { return dir_; }
    TreeManifest snapshot() const;

    /// Adds a pending node under `parent_id`. Throws NotFoundError,
    /// ValidationError (age, preset) or StateError (parent not done).
    std::string add_branch(const std::string& parent_id, const std::string& condition, int age_target,
                           const BranchOverrides& overrides = {});

    /// Runs the edit for a pending node: refine, invert (cached per source
    /// node), optional aging regularization, denoise, decode, persist. Failures
    /// mark the node failed and are not rethrown; returns the final state.
    JobState run_job(const std::string& node_id, const GenerativeBackend& backend, const PromptRefiner& refiner,
                     const MetricAdapters& metrics = {});

    /// After a restart: running nodes become failed; returns pending ids in creation order.
    std::vector<std::string> recover();

    /// Removes the subtree rooted at `node_id`. Refuses the root and any
    /// subtree with a running job. Returns removed ids.
    std::vector<std::string> prune(const std::string& node_id);

    std::filesystem::path image_path(const std::string& node_id) const;

    /// ASCII rendering: one line per node, children indented under parents.
    std::string render_ascii() const;

private:
    explicit MultiverseTree(std::filesystem::path dir) : dir_(std::move(dir)) {}

    void persist_locked();
    void set_state(const std::string& node_id, JobState state, const std::string& error = {});

    std::filesystem::path dir_;
    mutable std::mutex mu_;
    TreeManifest manifest_;
};

std::string render_ascii(const TreeManifest& manifest);

}  // namespace amk
