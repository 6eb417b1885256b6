// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// amk: edit, tree and ablate commands.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "amk/config.hpp"
#include "amk/editor.hpp"
#include "amk/error.hpp"
#include "amk/eval_harness.hpp"
#include "amk/fs_util.hpp"
#include "amk/multiverse_tree.hpp"
#include "amk/prompt_refiner.hpp"
#include "amk/sar_reference.hpp"
#include "amk/tree_service.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace amk;

constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;

// Every config key becomes a --flag; values are collected as strings and
// pushed through CliConfig::set_key after the file and environment layers.
const std::map<std::string, std::string>& config_help() {
    static const std::map<std::string, std::string> help = {
        {"backend", "toy or external:<name>"},
        {"model_path", "weights for an external backend"},
        {"seed", "seed for the backend and reference synthesis"},
        {"steps", "solver steps"},
        {"g", "key modulation scale"},
        {"preset", "none, replace_v, project_v, project_v_mask, project_v_mask_keymod or full"},
        {"sar", "true/false: aging regularization"},
        {"sar_source", "synthetic, external_service or user_supplied"},
        {"cluster_size", "images per reference age cluster"},
        {"sar_age_low", "young reference age"},
        {"sar_age_high", "old reference age"},
        {"image_service_url", "age-progression service for external_service"},
        {"cache_dir", "feature and reference cache"},
        {"refine_mode", "template or llm"},
        {"llm_endpoint", "chat-completions base URL"},
        {"llm_model", "model name sent to the LLM endpoint"},
    };
    return help;
}

struct ConfigFlags {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "key = value config file");
        for (const auto& key : config_keys()) {
            std::string flag = "--" + key;
            for (char& c : flag)
                if (c == '_') c = '-';
            const auto it = config_help().find(key);
            options[key] = app->add_option(flag, values[key], it == config_help().end() ? "" : it->second);
        }
    }

    CliConfig resolve() const {
        CliConfig cfg;
        if (!config_file.empty()) apply_config_file(cfg, config_file);
        apply_env(cfg);
        for (const auto& [key, opt] : options)
            if (opt->count() > 0) cfg.set_key(key, values.at(key));
        cfg.validate();
        return cfg;
    }
};

// Preset actually run: with sar disabled, the aging regularization is dropped
// and the remaining mixing is kept.
Preset effective_preset(const CliConfig& cfg, const std::string& name) {
    auto p = find_preset(name);
    if (!p) throw ValidationError("unknown preset '" + name + "'");
    if (!cfg.sar && p->sar) {
        p->sar = false;
        p->name += "-nosar";
    }
    return *p;
}

PromptRefiner make_refiner(const CliConfig& cfg) {
    std::optional<LlmSettings> llm;
    if (cfg.refine_mode == "llm") {
        LlmSettings s;
        s.endpoint = cfg.llm_endpoint;
        s.model = cfg.llm_model;
        llm = s;
    }
    return PromptRefiner(TemplateTable::load_default(), llm);
}

RefineMode refine_mode(const CliConfig& cfg) {
    return cfg.refine_mode == "llm" ? RefineMode::llm : RefineMode::template_only;
}

struct SarHolder {
    std::unique_ptr<HttpImageGenerationClient> client;
    ClusterBuildOptions opts;
};

SarHolder sar_options(const CliConfig& cfg, const GenerativeBackend& backend, const std::string& user_dir) {
    SarHolder h;
    h.opts.source = cfg.sar_source;
    h.opts.size = cfg.cluster_size;
    h.opts.cache_root = fs::path(cfg.cache_dir) / "sar";
    h.opts.seed = cfg.seed;
    h.opts.codec = &backend;
    h.opts.user_dir = user_dir;
    if (cfg.sar_source == ClusterSource::external_service) {
        h.client = std::make_unique<HttpImageGenerationClient>(cfg.image_service_url);
        h.opts.client = h.client.get();
    }
    return h;
}

struct EditArgs {
    std::string image;
    int age = 0;
    std::string condition;
    std::string subject = "person";
    std::string source_prompt;
    std::string out;
    std::string sar_user_dir;
    std::string replay;
};

struct EditOutcome {
    std::string png;
    json sidecar;
};

// One inversion shared by every preset in `presets`.
std::vector<EditOutcome> run_edits(const CliConfig& cfg, const EditArgs& args, const std::vector<Preset>& presets) {
    validate_target_age(args.age);
    const auto backend = open_backend(cfg.backend_config());
    const PromptRefiner refiner = make_refiner(cfg);
    const RefinedPrompt refined = refiner.refine(EditRequest{args.subject, args.age, args.condition}, refine_mode(cfg));
    if (refined.fell_back) std::cerr << "warning: " << refined.warning << "\n";

    const StepSchedule schedule = StepSchedule::uniform(cfg.steps);
    const std::string source = args.source_prompt.empty() ? args.subject : args.source_prompt;
    const InversionResult inversion = invert(*backend, backend->encode_image(args.image), schedule, source);

    std::shared_ptr<const AgingDirection> direction;
    const MockTextImageScorer scorer;
    const MockAgeEstimator estimator;
    const MockFaceEmbedder embedder;
    const std::string input_png = read_file(args.image);

    std::vector<EditOutcome> out;
    for (const Preset& preset : presets) {
        std::optional<SarSettings> sar;
        std::optional<float> w;
        if (preset.sar) {
            if (!direction) {
                SarHolder h = sar_options(cfg, *backend, args.sar_user_dir);
                direction =
                    build_aging_direction(args.image, *backend, schedule, h.opts, cfg.sar_age_low, cfg.sar_age_high);
            }
            w = age_weight(static_cast<float>(args.age), direction->age_low, direction->age_high);
            sar = SarSettings{direction, *w};
        }
        const Latent latent = edit(*backend, inversion, schedule, refined.text, make_config(preset, cfg.g, sar));
        EditOutcome o;
        o.png = backend->decode_latent(latent);

        const auto ct = clip_t(o.png, refined.text, &scorer);
        const double age_pred = estimator.predict_age(o.png);
        const auto ids = id_sim(o.png, std::span<const std::string>(&input_png, 1), &embedder);
        o.sidecar = json{{"tool", "amk edit"},
                         {"input", fs::absolute(args.image).string()},
                         {"input_hash", input_hash(args.image)},
                         {"age", args.age},
                         {"condition", args.condition},
                         {"subject", args.subject},
                         {"source_prompt", source},
                         {"sar_user_dir", args.sar_user_dir},
                         {"refined_prompt", refined.text},
                         {"prompt_from_llm", refined.from_llm},
                         {"config", cfg.to_json()},
                         {"preset", preset.name},
                         {"preset_label", preset.label},
                         {"sar_weight", w ? json(*w) : json(nullptr)},
                         {"schedule", schedule.id()},
                         {"backend", backend->id()},
                         {"metrics",
                          {{"adapters", "mock"},
                           {"clip_t", ct ? json(*ct) : json(nullptr)},
                           {"age_pred", age_pred},
                           {"id_sim", ids ? json(*ids) : json(nullptr)}}}};
        out.push_back(std::move(o));
    }
    return out;
}

std::string sidecar_path(const std::string& image_out) { return image_out + ".json"; }

// Restores the settings a sidecar was produced with.
void load_replay(const std::string& path, CliConfig& cfg, EditArgs& args) {
    const json j = json::parse(read_file(path));
    for (const auto& [key, value] : j.at("config").items())
        cfg.set_key(key, value.is_string() ? value.get<std::string>() : value.dump());
    cfg.preset = j.at("preset").get<std::string>();
    if (cfg.preset.size() > 6 && cfg.preset.ends_with("-nosar")) {
        cfg.preset.resize(cfg.preset.size() - 6);
        cfg.sar = false;
    }
    cfg.validate();
    args.image = j.at("input").get<std::string>();
    args.age = j.at("age").get<int>();
    args.condition = j.at("condition").get<std::string>();
    args.subject = j.at("subject").get<std::string>();
    args.source_prompt = j.at("source_prompt").get<std::string>();
    args.sar_user_dir = j.value("sar_user_dir", "");
}

int cmd_edit(const ConfigFlags& flags, EditArgs args) {
    CliConfig cfg = flags.resolve();
    if (!args.replay.empty()) {
        load_replay(args.replay, cfg, args);
    } else if (args.image.empty()) {
        throw ValidationError("edit needs an input image (or --replay)");
    }
    if (args.out.empty()) throw ValidationError("--out is required");
    const auto outcomes = run_edits(cfg, args, {effective_preset(cfg, cfg.preset)});
    atomic_write_file(args.out, outcomes[0].png);
    atomic_write_file(sidecar_path(args.out), outcomes[0].sidecar.dump(2) + "\n");
    std::cout << args.out << "\n";
    return 0;
}

int cmd_ablate(const ConfigFlags& flags, EditArgs args) {
    const CliConfig cfg = flags.resolve();
    if (args.out.empty()) throw ValidationError("--out is required");
    const std::vector<Preset>& ladder = ablation_ladder();
    const auto outcomes = run_edits(cfg, args, ladder);

    // Everything lands in a staging directory that replaces --out at the end.
    const fs::path out = args.out;
    const fs::path staged = staging_path(out);
    fs::create_directories(staged);
    std::vector<MetricRecord> records;
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        const std::string stem = std::to_string(i + 1) + "_" + ladder[i].name;
        write_file(staged / (stem + ".png"), outcomes[i].png);
        json side = outcomes[i].sidecar;
        side["tool"] = "amk ablate";
        write_file(staged / (stem + ".png.json"), side.dump(2) + "\n");
        const json& m = side["metrics"];
        MetricRecord r;
        r.id = stem;
        r.group = ladder[i].label;
        if (!m["clip_t"].is_null()) r.clip_t = m["clip_t"].get<double>();
        r.age_pred = m["age_pred"].get<double>();
        r.age_target = args.age;
        if (!m["id_sim"].is_null()) r.id_sim = m["id_sim"].get<double>();
        records.push_back(r);
    }
    const auto rows = summarize(records);
    write_file(staged / "records.jsonl", to_jsonl(records));
    write_file(staged / "report.txt", render_text(rows));
    write_file(staged / "report.csv", render_csv(rows));
    commit_directory(staged, out);
    std::cout << render_text(rows);
    return 0;
}

TreeSettings tree_settings(const CliConfig& cfg, bool from_root, const std::string& source_prompt,
                           const std::string& sar_user_dir) {
    TreeSettings s;
    s.seed = cfg.seed;
    s.steps = cfg.steps;
    s.g = cfg.g;
    s.preset = cfg.preset;
    if (!cfg.sar && find_preset(cfg.preset)->sar) s.preset = "project_v_mask_keymod";
    s.from_root = from_root;
    s.source_prompt = source_prompt;
    s.sar_source = cfg.sar_source;
    s.image_service_url = cfg.image_service_url;
    s.sar_user_dir = sar_user_dir;
    s.cluster_size = cfg.cluster_size;
    s.sar_age_low = cfg.sar_age_low;
    s.sar_age_high = cfg.sar_age_high;
    s.refine_mode = cfg.refine_mode;
    return s;
}

// The toy backend id embeds its seed, so reopen it with the tree's seed
// unless --seed says otherwise.
std::shared_ptr<GenerativeBackend> tree_backend(const CliConfig& cfg, const TreeManifest& m,
                                                const ConfigFlags& flags) {
    BackendConfig bc = cfg.backend_config();
    if (flags.options.at("seed")->count() == 0) bc.toy.seed = m.settings.seed;
    return open_backend(bc);
}

MetricAdapters mock_adapters() {
    return MetricAdapters{std::make_shared<MockTextImageScorer>(), std::make_shared<MockAgeEstimator>(),
                          std::make_shared<MockFaceEmbedder>()};
}

int wait_for_signal() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    int sig = 0;
    sigwait(&set, &sig);
    return sig;
}

}  // namespace

int main(int argc, char** argv) {
    // Signals are taken synchronously by `tree serve`; block them before any
    // thread starts so every thread inherits the mask.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    CLI::App app{"amk: training-free face aging on rectified-flow backends"};
    app.require_subcommand(1);

    EditArgs edit_args;
    ConfigFlags edit_flags;
    auto* edit_cmd = app.add_subcommand("edit", "Age one image and write it with a JSON sidecar");
    edit_cmd->add_option("image", edit_args.image, "input PNG");
    edit_cmd->add_option("--age", edit_args.age, "target age (20-90)");
    edit_cmd->add_option("--condition", edit_args.condition, "external condition, e.g. \"hair loss\"");
    edit_cmd->add_option("--subject", edit_args.subject, "short subject description");
    edit_cmd->add_option("--source-prompt", edit_args.source_prompt, "prompt describing the input image");
    edit_cmd->add_option("--sar-user-dir", edit_args.sar_user_dir, "reference clusters as <dir>/<age>/*.png");
    edit_cmd->add_option("--out", edit_args.out, "output PNG; the sidecar goes to <out>.json");
    edit_cmd->add_option("--replay", edit_args.replay, "rerun from a sidecar");
    edit_flags.attach(edit_cmd);

    EditArgs ablate_args;
    ablate_args.age = 70;
    ConfigFlags ablate_flags;
    auto* ablate_cmd = app.add_subcommand("ablate", "Run the five ablation presets and write a report");
    ablate_cmd->add_option("image", ablate_args.image, "input PNG")->required();
    ablate_cmd->add_option("--age", ablate_args.age, "target age (20-90)");
    ablate_cmd->add_option("--condition", ablate_args.condition, "external condition");
    ablate_cmd->add_option("--subject", ablate_args.subject, "short subject description");
    ablate_cmd->add_option("--source-prompt", ablate_args.source_prompt, "prompt describing the input image");
    ablate_cmd->add_option("--sar-user-dir", ablate_args.sar_user_dir, "reference clusters as <dir>/<age>/*.png");
    ablate_cmd->add_option("--out", ablate_args.out, "output directory")->required();
    ablate_flags.attach(ablate_cmd);

    auto* tree_cmd = app.add_subcommand("tree", "Aging tree commands");
    tree_cmd->require_subcommand(1);

    struct {
        std::string dir, image, subject = "person", source_prompt, sar_user_dir;
        int age = 0;
        bool from_root = false;
        ConfigFlags flags;
    } init;
    auto* init_cmd = tree_cmd->add_subcommand("init", "Create a tree rooted at an image");
    init_cmd->add_option("dir", init.dir, "tree directory")->required();
    init_cmd->add_option("--image", init.image, "root image (PNG)")->required();
    init_cmd->add_option("--age", init.age, "age of the person in the image")->required();
    init_cmd->add_option("--subject", init.subject, "short subject description");
    init_cmd->add_option("--source-prompt", init.source_prompt, "prompt describing the root image");
    init_cmd->add_option("--sar-user-dir", init.sar_user_dir, "reference clusters as <dir>/<age>/*.png");
    init_cmd->add_flag("--from-root", init.from_root, "branches always edit the root image");
    init.flags.attach(init_cmd);

    struct {
        std::string dir, parent = "root", condition, preset;
        int age = 0;
        std::optional<float> g;
        ConfigFlags flags;
    } branch;
    auto* branch_cmd = tree_cmd->add_subcommand("branch", "Add a branch and run its edit");
    branch_cmd->add_option("dir", branch.dir, "tree directory")->required();
    branch_cmd->add_option("--parent", branch.parent, "parent node id (default root)");
    branch_cmd->add_option("--condition", branch.condition, "external condition");
    branch_cmd->add_option("--age", branch.age, "target age (20-90)")->required();
    branch_cmd->add_option("--branch-preset", branch.preset, "preset for this branch only");
    branch_cmd->add_option("--branch-g", branch.g, "key modulation strength for this branch only");
    branch.flags.attach(branch_cmd);

    struct {
        std::string dir, host = "127.0.0.1";
        int port = 8080;
        ConfigFlags flags;
    } serve;
    auto* serve_cmd = tree_cmd->add_subcommand("serve", "Serve the tree over HTTP");
    serve_cmd->add_option("dir", serve.dir, "tree directory")->required();
    serve_cmd->add_option("--host", serve.host, "bind address (default 127.0.0.1)");
    serve_cmd->add_option("--port", serve.port, "default 8080; 0 picks a free port");
    serve.flags.attach(serve_cmd);

    std::string show_dir;
    auto* show_cmd = tree_cmd->add_subcommand("show", "Print the tree");
    show_cmd->add_option("dir", show_dir, "tree directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*edit_cmd) return cmd_edit(edit_flags, edit_args);
        if (*ablate_cmd) return cmd_ablate(ablate_flags, ablate_args);
        if (*init_cmd) {
            const CliConfig cfg = init.flags.resolve();
            const auto backend = open_backend(cfg.backend_config());
            auto tree = MultiverseTree::create(init.dir, init.image, init.subject, init.age,
                                               tree_settings(cfg, init.from_root, init.source_prompt,
                                                             init.sar_user_dir.empty() ? "" : fs::absolute(init.sar_user_dir).string()),
                                               *backend);
            std::cout << tree->render_ascii();
            return 0;
        }
        if (*branch_cmd) {
            const CliConfig cfg = branch.flags.resolve();
            auto tree = MultiverseTree::open(branch.dir);
            const auto backend = tree_backend(cfg, tree->snapshot(), branch.flags);
            BranchOverrides ov;
            if (!branch.preset.empty()) ov.preset = branch.preset;
            ov.g = branch.g;
            const std::string id = tree->add_branch(branch.parent, branch.condition, branch.age, ov);
            const JobState st = tree->run_job(id, *backend, make_refiner(cfg), mock_adapters());
            const TreeManifest m = tree->snapshot();
            std::cout << render_ascii(m);
            if (st != JobState::done) {
                std::cerr << "error: branch " << id << " failed: " << m.find(id)->error << "\n";
                return kExitFailure;
            }
            return 0;
        }
        if (*serve_cmd) {
            const CliConfig cfg = serve.flags.resolve();
            auto tree = std::shared_ptr<MultiverseTree>(MultiverseTree::open(serve.dir));
            const auto backend = tree_backend(cfg, tree->snapshot(), serve.flags);
            TreeService service(tree, backend, std::make_shared<PromptRefiner>(make_refiner(cfg)), mock_adapters());
            const int port = service.start(serve.host, serve.port);
            std::cout << "listening on http://" << serve.host << ":" << port << std::endl;
            wait_for_signal();
            service.stop();
            return 0;
        }
        if (*show_cmd) {
            std::cout << MultiverseTree::open(show_dir)->render_ascii();
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
