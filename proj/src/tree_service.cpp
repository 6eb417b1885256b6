// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/tree_service.hpp"

#include <httplib.h>

#include "amk/error.hpp"
#include "amk/fs_util.hpp"

namespace amk {

namespace {

using nlohmann::json;

constexpr std::string_view kJobPrefix = "job-";

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, json{{"error", message}});
}

// Maps the library's exception types onto HTTP statuses.
template <class F>
void guarded(httplib::Response& res, F&& body) {
    try {
        body();
    } catch (const NotFoundError& e) {
        send_error(res, 404, e.what());
    } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
    } catch (const StateError& e) {
        send_error(res, 409, e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, std::string("bad request body: ") + e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

}  // namespace

std::string job_id_for(const std::string& node_id) { return std::string(kJobPrefix) + node_id; }

TreeService::TreeService(std::shared_ptr<MultiverseTree> tree, std::shared_ptr<const GenerativeBackend> backend,
                         std::shared_ptr<const PromptRefiner> refiner, MetricAdapters metrics)
    : tree_(std::move(tree)),
      backend_(std::move(backend)),
      refiner_(std::move(refiner)),
      metrics_(std::move(metrics)),
      server_(std::make_unique<httplib::Server>()) {
    AMK_REQUIRE(tree_ && backend_ && refiner_, "TreeService needs a tree, a backend and a refiner");
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    install_routes();
}

TreeService::~TreeService() { stop(); }

void TreeService::set_on_job_start(std::function<void(const std::string&)> hook) {
    std::lock_guard lock(qmu_);
    on_job_start_ = std::move(hook);
}

int TreeService::start(const std::string& host, int port) {
    int bound = -1;
    if (port == 0) {
        bound = server_->bind_to_any_port(host);
    } else if (server_->bind_to_port(host, port)) {
        bound = port;
    }
    if (bound < 0) throw IoError("cannot listen on " + host + ":" + std::to_string(port) + " (port busy?)");

    for (const auto& id : tree_->recover()) enqueue(id);
    worker_ = std::thread([this] { worker_loop(); });
    listen_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void TreeService::wait() {
    std::unique_lock lock(qmu_);
    qcv_.wait(lock, [&] { return stopping_; });
}

void TreeService::stop() {
    {
        std::lock_guard lock(qmu_);
        stopping_ = true;
    }
    qcv_.notify_all();
    server_->stop();
    if (listen_thread_.joinable() && listen_thread_.get_id() != std::this_thread::get_id()) listen_thread_.join();
    if (worker_.joinable()) worker_.join();
}

void TreeService::drain() {
    std::unique_lock lock(qmu_);
    qcv_.wait(lock, [&] { return (queue_.empty() && !busy_) || stopping_; });
}

void TreeService::enqueue(const std::string& node_id) {
    {
        std::lock_guard lock(qmu_);
        queue_.push_back(node_id);
    }
    qcv_.notify_all();
}

void TreeService::worker_loop() {
    for (;;) {
        std::string id;
        std::function<void(const std::string&)> hook;
        {
            std::unique_lock lock(qmu_);
            qcv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = queue_.front();
            queue_.pop_front();
            busy_ = true;
            hook = on_job_start_;
        }
        if (hook) hook(id);
        try {
            tree_->run_job(id, *backend_, *refiner_, metrics_);
        } catch (const std::exception&) {
            // Node was pruned or is no longer pending; nothing to run.
        }
        {
            std::lock_guard lock(qmu_);
            busy_ = false;
        }
        qcv_.notify_all();
    }
}

void TreeService::install_routes() {
    httplib::Server& s = *server_;
    s.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

    s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });

    s.Get("/tree", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, tree_->snapshot().to_json()); });
    });

    s.Get("/conditions", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, json{{"conditions", refiner_->condition_catalog()}}); });
    });

    s.Post("/branch", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json body = json::parse(req.body);
            if (!body.is_object()) throw ValidationError("request body must be a JSON object");
            if (!body.contains("parent_id") || !body["parent_id"].is_string())
                throw ValidationError("parent_id (string) is required");
            if (!body.contains("age_target") || !body["age_target"].is_number_integer())
                throw ValidationError("age_target (integer) is required");
            BranchOverrides ov;
            if (body.contains("overrides") && !body["overrides"].is_null()) {
                const json& o = body["overrides"];
                if (!o.is_object()) throw ValidationError("overrides must be an object");
                if (o.contains("preset")) ov.preset = o["preset"].get<std::string>();
                if (o.contains("g")) ov.g = o["g"].get<float>();
            }
            const std::string node_id =
                tree_->add_branch(body["parent_id"].get<std::string>(), body.value("condition", std::string()),
                                  body["age_target"].get<int>(), ov);
            enqueue(node_id);
            send_json(res, 202, json{{"job_id", job_id_for(node_id)}, {"node_id", node_id}});
        });
    });

    s.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string id = req.matches[1];
            if (id.rfind(kJobPrefix, 0) == 0) id = id.substr(kJobPrefix.size());
            const TreeManifest m = tree_->snapshot();
            const MultiverseNode* n = m.find(id);
            if (!n || !n->parent_id) throw NotFoundError("no job '" + std::string(req.matches[1]) + "'");
            json out{{"job_id", job_id_for(n->id)}, {"node_id", n->id}, {"state", to_string(n->job_state)}};
            if (!n->error.empty()) out["error"] = n->error;
            send_json(res, 200, out);
        });
    });

    s.Get(R"(/image/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1];
            const TreeManifest m = tree_->snapshot();
            const MultiverseNode* n = m.find(id);
            if (!n) throw NotFoundError("no node '" + id + "'");
            const auto path = tree_->image_path(id);
            if (n->job_state != JobState::done || !fs::exists(path))
                throw NotFoundError("node '" + id + "' has no image yet");
            res.status = 200;
            res.set_content(read_file(path), "image/png");
        });
    });

    s.Delete(R"(/node/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto removed = tree_->prune(req.matches[1]);
            {
                std::lock_guard lock(qmu_);
                std::erase_if(queue_, [&](const std::string& q) {
                    return std::find(removed.begin(), removed.end(), q) != removed.end();
                });
            }
            send_json(res, 200, json{{"removed", removed}});
        });
    });
}

}  // namespace amk
