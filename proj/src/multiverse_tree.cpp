// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/multiverse_tree.hpp"

#include <chrono>
#include <ctime>
#include <set>

#include "amk/editor.hpp"
#include "amk/error.hpp"
#include "amk/fs_util.hpp"

namespace amk {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kRootId = "root";

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
}

// Overwrites known keys on top of whatever the file carried.
json node_to_json(const MultiverseNode& n) {
    json j = n.unknown.is_object() ? n.unknown : json::object();
    j["id"] = n.id;
    j["parent_id"] = n.parent_id ? json(*n.parent_id) : json(nullptr);
    j["age"] = n.age;
    j["condition"] = n.condition;
    j["refined_prompt"] = n.refined_prompt;
    j["image_ref"] = n.image_ref;
    if (n.metrics) {
        j["metrics"] = json{{"clip_t", optional_number(n.metrics->clip_t)},
                            {"age_mae_contrib", optional_number(n.metrics->age_mae_contrib)},
                            {"id_sim", optional_number(n.metrics->id_sim)}};
    } else {
        j["metrics"] = nullptr;
    }
    j["created_at"] = n.created_at;
    j["job_state"] = to_string(n.job_state);
    if (n.error.empty())
        j.erase("error");
    else
        j["error"] = n.error;
    json ov = json::object();
    if (n.overrides.preset) ov["preset"] = *n.overrides.preset;
    if (n.overrides.g) ov["g"] = *n.overrides.g;
    j["overrides"] = ov;
    return j;
}

MultiverseNode node_from_json(const json& j) {
    static const std::set<std::string> known = {"id",      "parent_id",  "age",       "condition", "refined_prompt",
                                                "image_ref", "metrics", "created_at", "job_state", "error",
                                                "overrides"};
    MultiverseNode n;
    n.id = j.at("id").get<std::string>();
    if (j.contains("parent_id") && !j["parent_id"].is_null()) n.parent_id = j["parent_id"].get<std::string>();
    n.age = j.at("age").get<int>();
    n.condition = j.value("condition", "");
    n.refined_prompt = j.value("refined_prompt", "");
    n.image_ref = j.value("image_ref", "");
    if (j.contains("metrics") && j["metrics"].is_object()) {
        const json& m = j["metrics"];
        n.metrics = NodeMetrics{read_optional(m, "clip_t"), read_optional(m, "age_mae_contrib"),
                                read_optional(m, "id_sim")};
    }
    n.created_at = j.value("created_at", "");
    const auto state = parse_job_state(j.value("job_state", ""));
    if (!state) throw IoError("manifest node '" + n.id + "' has an unknown job_state");
    n.job_state = *state;
    n.error = j.value("error", "");
    if (j.contains("overrides") && j["overrides"].is_object()) {
        const json& ov = j["overrides"];
        if (ov.contains("preset")) n.overrides.preset = ov["preset"].get<std::string>();
        if (ov.contains("g")) n.overrides.g = ov["g"].get<float>();
    }
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) n.unknown[key] = value;
    return n;
}

json settings_to_json(const TreeSettings& s) {
    return json{{"seed", s.seed},
                {"steps", s.steps},
                {"g", s.g},
                {"preset", s.preset},
                {"from_root", s.from_root},
                {"source_prompt", s.source_prompt},
                {"sar_source", to_string(s.sar_source)},
                {"image_service_url", s.image_service_url},
                {"sar_user_dir", s.sar_user_dir},
                {"cluster_size", s.cluster_size},
                {"sar_age_low", s.sar_age_low},
                {"sar_age_high", s.sar_age_high},
                {"refine_mode", s.refine_mode}};
}

TreeSettings settings_from_json(const json& j) {
    TreeSettings s;
    s.seed = j.value("seed", s.seed);
    s.steps = j.value("steps", s.steps);
    s.g = j.value("g", s.g);
    s.preset = j.value("preset", s.preset);
    s.from_root = j.value("from_root", s.from_root);
    s.source_prompt = j.value("source_prompt", s.source_prompt);
    const std::string src = j.value("sar_source", std::string("synthetic"));
    if (src == "synthetic")
        s.sar_source = ClusterSource::synthetic;
    else if (src == "external_service")
        s.sar_source = ClusterSource::external_service;
    else if (src == "user_supplied")
        s.sar_source = ClusterSource::user_supplied;
    else
        throw IoError("manifest: unknown sar_source '" + src + "'");
    s.image_service_url = j.value("image_service_url", s.image_service_url);
    s.sar_user_dir = j.value("sar_user_dir", s.sar_user_dir);
    s.cluster_size = j.value("cluster_size", s.cluster_size);
    s.sar_age_low = j.value("sar_age_low", s.sar_age_low);
    s.sar_age_high = j.value("sar_age_high", s.sar_age_high);
    s.refine_mode = j.value("refine_mode", s.refine_mode);
    return s;
}

void render_children(const TreeManifest& m, const std::string& id, const std::string& prefix, std::string& out) {
    std::vector<const MultiverseNode*> kids;
    for (const auto& n : m.nodes)
        if (n.parent_id && *n.parent_id == id) kids.push_back(&n);
    for (std::size_t i = 0; i < kids.size(); ++i) {
        const bool last = i + 1 == kids.size();
        const MultiverseNode& n = *kids[i];
        out += prefix + (last ? "`-- " : "|-- ") + n.id + "  age " + std::to_string(n.age) + "  " +
               (n.condition.empty() ? "(no condition)" : n.condition) + "  [" + to_string(n.job_state) + "]";
        if (!n.error.empty()) out += "  " + n.error;
        out += "\n";
        render_children(m, n.id, prefix + (last ? "    " : "|   "), out);
    }
}

}  // namespace

const char* to_string(JobState s) {
    switch (s) {
        case JobState::pending: return "pending";
        case JobState::running: return "running";
        case JobState::done: return "done";
        case JobState::failed: return "failed";
    }
    return "?";
}

std::optional<JobState> parse_job_state(std::string_view s) {
    for (JobState st : {JobState::pending, JobState::running, JobState::done, JobState::failed})
        if (s == to_string(st)) return st;
    return std::nullopt;
}

const MultiverseNode* TreeManifest::find(std::string_view id) const {
    for (const auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

MultiverseNode* TreeManifest::find(std::string_view id) {
    for (auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

const MultiverseNode& TreeManifest::root() const {
    for (const auto& n : nodes)
        if (!n.parent_id) return n;
    throw ContractError("tree has no root");
}

std::vector<std::string> TreeManifest::subtree(std::string_view id) const {
    std::vector<std::string> out{std::string(id)};
    for (std::size_t i = 0; i < out.size(); ++i)
        for (const auto& n : nodes)
            if (n.parent_id && *n.parent_id == out[i]) out.push_back(n.id);
    return out;
}

void TreeManifest::validate() const {
    AMK_REQUIRE(!nodes.empty(), "tree manifest has no nodes");
    std::set<std::string> ids;
    std::size_t roots = 0;
    for (const auto& n : nodes) {
        AMK_REQUIRE(!n.id.empty(), "tree manifest: empty node id");
        AMK_REQUIRE(ids.insert(n.id).second, "tree manifest: duplicate node id '", n.id, "'");
        if (!n.parent_id) {
            ++roots;
            AMK_REQUIRE(n.condition.empty(), "tree manifest: root '", n.id, "' carries a condition");
        }
    }
    AMK_REQUIRE(roots == 1, "tree manifest: expected exactly one root, found ", roots);
    for (const auto& n : nodes) {
        if (n.parent_id)
            AMK_REQUIRE(ids.count(*n.parent_id), "tree manifest: node '", n.id, "' has missing parent '",
                        *n.parent_id, "'");
    }
    // Every node must reach the root within |nodes| hops.
    for (const auto& n : nodes) {
        const MultiverseNode* cur = &n;
        std::size_t hops = 0;
        while (cur->parent_id) {
            cur = find(*cur->parent_id);
            AMK_REQUIRE(++hops <= nodes.size(), "tree manifest: cycle through node '", n.id, "'");
        }
    }
}

json TreeManifest::to_json() const {
    json j = unknown.is_object() ? unknown : json::object();
    j["version"] = version;
    j["subject_desc"] = subject_desc;
    j["backend"] = backend;
    j["settings"] = settings_to_json(settings);
    json arr = json::array();
    for (const auto& n : nodes) arr.push_back(node_to_json(n));
    j["nodes"] = std::move(arr);
    return j;
}

TreeManifest TreeManifest::from_json(const json& j) {
    TreeManifest m;
    try {
        m.version = j.at("version").get<int>();
        if (m.version > kManifestVersion)
            throw IoError("tree manifest version " + std::to_string(m.version) + " is newer than supported (" +
                          std::to_string(kManifestVersion) + ")");
        m.subject_desc = j.value("subject_desc", "");
        m.backend = j.value("backend", "");
        if (j.contains("settings")) m.settings = settings_from_json(j["settings"]);
        for (const auto& n : j.at("nodes")) m.nodes.push_back(node_from_json(n));
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed tree manifest: ") + e.what());
    }
    for (const auto& [key, value] : j.items())
        if (key != "version" && key != "subject_desc" && key != "backend" && key != "settings" && key != "nodes")
            m.unknown[key] = value;
    try {
        m.validate();
    } catch (const ContractError& e) {
        throw IoError(std::string("invalid tree manifest: ") + e.what());
    }
    return m;
}

std::unique_ptr<MultiverseTree> MultiverseTree::create(const fs::path& dir, const fs::path& input_image,
                                                       const std::string& subject_desc, int root_age,
                                                       const TreeSettings& settings,
                                                       const GenerativeBackend& backend) {
    if (fs::exists(dir / "manifest.json"))
        throw StateError("a tree already exists in " + dir.string() + "; refusing to overwrite it");
    if (root_age < 1 || root_age > 120)
        throw ValidationError("root age " + std::to_string(root_age) + " is not a plausible age");
    if (!find_preset(settings.preset)) throw ValidationError("unknown preset '" + settings.preset + "'");
    AMK_REQUIRE(settings.steps >= 1, "tree settings: steps must be >= 1");

    const std::string png = read_file(input_image);
    backend.encode_image_bytes(png);  // rejects unreadable images and wrong resolutions

    fs::create_directories(dir / "images");
    fs::create_directories(dir / "features");
    std::unique_ptr<MultiverseTree> tree(new MultiverseTree(dir));
    atomic_write_file(tree->image_path(kRootId), png);

    TreeManifest& m = tree->manifest_;
    m.subject_desc = subject_desc;
    m.backend = backend.id();
    m.settings = settings;
    if (m.settings.source_prompt.empty()) m.settings.source_prompt = subject_desc;
    MultiverseNode root;
    root.id = kRootId;
    root.age = root_age;
    root.refined_prompt = m.settings.source_prompt;
    root.image_ref = "images/root.png";
    root.created_at = now_iso8601();
    root.job_state = JobState::done;
    m.nodes.push_back(std::move(root));
    std::lock_guard lock(tree->mu_);
    tree->persist_locked();
    return tree;
}

std::unique_ptr<MultiverseTree> MultiverseTree::open(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    if (!fs::exists(path)) throw NotFoundError("no tree manifest in " + dir.string());
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw IoError("unparseable tree manifest " + path.string() + ": " + e.what());
    }
    std::unique_ptr<MultiverseTree> tree(new MultiverseTree(dir));
    tree->manifest_ = TreeManifest::from_json(j);
    return tree;
}

TreeManifest MultiverseTree::snapshot() const {
    std::lock_guard lock(mu_);
    return manifest_;
}

fs::path MultiverseTree::image_path(const std::string& node_id) const { return dir_ / "images" / (node_id + ".png"); }

void MultiverseTree::persist_locked() {
    manifest_.validate();
    atomic_write_file(dir_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
}

std::string MultiverseTree::add_branch(const std::string& parent_id, const std::string& condition, int age_target,
                                       const BranchOverrides& overrides) {
    validate_target_age(age_target);
    if (overrides.preset && !find_preset(*overrides.preset))
        throw ValidationError("unknown preset '" + *overrides.preset + "'");
    if (overrides.g && !std::isfinite(*overrides.g)) throw ValidationError("g must be finite");

    std::lock_guard lock(mu_);
    const MultiverseNode* parent = manifest_.find(parent_id);
    if (!parent) throw NotFoundError("no node '" + parent_id + "'");
    if (parent->job_state != JobState::done)
        throw StateError("cannot branch from node '" + parent_id + "' in state " + to_string(parent->job_state));

    int next = 1;
    for (const auto& n : manifest_.nodes)
        if (n.id.size() == 5 && n.id[0] == 'n') next = std::max(next, std::stoi(n.id.substr(1)) + 1);
    char id[16];
    std::snprintf(id, sizeof id, "n%04d", next);

    MultiverseNode node;
    node.id = id;
    node.parent_id = parent_id;
    node.age = age_target;
    node.condition = trim(condition);
    node.image_ref = "images/" + node.id + ".png";
    node.created_at = now_iso8601();
    node.job_state = JobState::pending;
    node.overrides = overrides;
    manifest_.nodes.push_back(node);
    persist_locked();
    return node.id;
}

void MultiverseTree::set_state(const std::string& node_id, JobState state, const std::string& error) {
    std::lock_guard lock(mu_);
    MultiverseNode* n = manifest_.find(node_id);
    if (!n) throw NotFoundError("no node '" + node_id + "'");
    n->job_state = state;
    n->error = error;
    persist_locked();
}

JobState MultiverseTree::run_job(const std::string& node_id, const GenerativeBackend& backend,
                                 const PromptRefiner& refiner, const MetricAdapters& adapters) {
    MultiverseNode node;
    MultiverseNode anchor;
    TreeManifest view;
    {
        std::lock_guard lock(mu_);
        MultiverseNode* n = manifest_.find(node_id);
        if (!n) throw NotFoundError("no node '" + node_id + "'");
        if (n->job_state != JobState::pending)
            throw StateError("node '" + node_id + "' is " + to_string(n->job_state) + ", not pending");
        n->job_state = JobState::running;
        n->error.clear();
        persist_locked();
        node = *n;
        view = manifest_;
    }

    try {
        if (view.backend != backend.id())
            throw BackendError("tree was created with backend '" + view.backend + "', current backend is '" +
                               backend.id() + "'");
        const TreeSettings& s = view.settings;
        anchor = s.from_root ? view.root() : *view.find(*node.parent_id);

        const std::string preset_name = node.overrides.preset.value_or(s.preset);
        const auto preset = find_preset(preset_name);
        if (!preset) throw ValidationError("unknown preset '" + preset_name + "'");
        const float g = node.overrides.g.value_or(s.g);

        const RefinedPrompt refined =
            refiner.refine(EditRequest{view.subject_desc, node.age, node.condition},
                           s.refine_mode == "llm" ? RefineMode::llm : RefineMode::template_only);
        {
            std::lock_guard lock(mu_);
            if (MultiverseNode* n = manifest_.find(node_id)) {
                n->refined_prompt = refined.text;
                if (refined.fell_back) n->unknown["refine_warning"] = refined.warning;
                persist_locked();
            }
        }

        const StepSchedule schedule = StepSchedule::uniform(s.steps);
        const fs::path anchor_image = image_path(anchor.id);
        auto lease = backend.begin_job();

        const fs::path inv_dir = dir_ / "features" / anchor.id / ("inversion-" + schedule.id());
        InversionResult inversion;
        if (fs::exists(inv_dir / "noise.bin")) {
            inversion = InversionResult::load(inv_dir);
        } else {
            const std::string source = anchor.parent_id ? anchor.refined_prompt : s.source_prompt;
            inversion = invert(backend, backend.encode_image(anchor_image), schedule, source);
            inversion.save(inv_dir);
        }

        std::optional<SarSettings> sar;
        if (preset->sar) {
            ClusterBuildOptions opts;
            opts.source = s.sar_source;
            opts.size = s.cluster_size;
            opts.cache_root = dir_ / "cache" / "sar";
            opts.seed = s.seed;
            opts.codec = &backend;
            opts.user_dir = s.sar_user_dir;
            std::unique_ptr<HttpImageGenerationClient> client;
            if (s.sar_source == ClusterSource::external_service) {
                client = std::make_unique<HttpImageGenerationClient>(s.image_service_url);
                opts.client = client.get();
            }
            auto direction =
                build_aging_direction(anchor_image, backend, schedule, opts, s.sar_age_low, s.sar_age_high);
            const float w = age_weight(static_cast<float>(node.age), direction->age_low, direction->age_high);
            sar = SarSettings{direction, w};
        }
        const MixingConfig cfg = make_config(*preset, g, sar);
        const Latent out = edit(backend, inversion, schedule, refined.text, cfg);
        const std::string png = backend.decode_latent(out);
        atomic_write_file(image_path(node_id), png);

        NodeMetrics metrics;
        bool any_metric = false;
        if (adapters.scorer) metrics.clip_t = clip_t(png, refined.text, adapters.scorer.get()), any_metric = true;
        if (adapters.age_estimator) {
            metrics.age_mae_contrib = std::abs(adapters.age_estimator->predict_age(png) - node.age);
            any_metric = true;
        }
        if (adapters.face_embedder) {
            const std::string ref = read_file(image_path(view.root().id));
            metrics.id_sim = id_sim(png, std::span<const std::string>(&ref, 1), adapters.face_embedder.get());
            any_metric = true;
        }

        std::lock_guard lock(mu_);
        MultiverseNode* n = manifest_.find(node_id);
        if (!n) return JobState::failed;  // pruned while running is refused, so this is defensive only
        if (any_metric) n->metrics = metrics;
        n->job_state = JobState::done;
        persist_locked();
        return JobState::done;
    } catch (const std::exception& e) {
        try {
            set_state(node_id, JobState::failed, e.what());
        } catch (const NotFoundError&) {
        }
        return JobState::failed;
    }
}

std::vector<std::string> MultiverseTree::recover() {
    std::lock_guard lock(mu_);
    std::vector<std::string> pending;
    bool changed = false;
    for (auto& n : manifest_.nodes) {
        if (n.job_state == JobState::running) {
            n.job_state = JobState::failed;
            n.error = "interrupted: the service stopped while this job was running";
            changed = true;
        } else if (n.job_state == JobState::pending) {
            pending.push_back(n.id);
        }
    }
    if (changed) persist_locked();
    return pending;
}

std::vector<std::string> MultiverseTree::prune(const std::string& node_id) {
    std::lock_guard lock(mu_);
    const MultiverseNode* n = manifest_.find(node_id);
    if (!n) throw NotFoundError("no node '" + node_id + "'");
    if (!n->parent_id) throw StateError("the root node cannot be deleted");
    const std::vector<std::string> doomed = manifest_.subtree(node_id);
    for (const auto& id : doomed)
        if (manifest_.find(id)->job_state == JobState::running)
            throw StateError("node '" + id + "' in the subtree has a running job");

    std::erase_if(manifest_.nodes, [&](const MultiverseNode& x) {
        return std::find(doomed.begin(), doomed.end(), x.id) != doomed.end();
    });
    persist_locked();
    std::error_code ec;
    for (const auto& id : doomed) {
        fs::remove(image_path(id), ec);
        fs::remove_all(dir_ / "features" / id, ec);
    }
    return doomed;
}

std::string MultiverseTree::render_ascii() const { return amk::render_ascii(snapshot()); }

std::string render_ascii(const TreeManifest& m) {
    const MultiverseNode& root = m.root();
    std::string out = root.id + "  age " + std::to_string(root.age) + "  " + m.subject_desc + "  [" +
                      to_string(root.job_state) + "]\n";
    render_children(m, root.id, "", out);
    return out;
}

}  // namespace amk
