// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// JSON-over-HTTP front end for one aging tree.
//
//   GET    /tree             manifest
//   POST   /branch           {parent_id, condition, age_target, overrides?} -> {job_id, node_id}
//   GET    /jobs/{id}        {state, error?}
//   GET    /image/{node_id}  PNG bytes
//   GET    /conditions       condition catalog
//   DELETE /node/{id}        prune subtree
//
// Jobs run one at a time, in submission order, on a single worker thread.

#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "amk/multiverse_tree.hpp"

namespace httplib {
class Server;
}

namespace amk {

/// Job ids are the node id with this prefix.
std::string job_id_for(const std::string& node_id);

class TreeService {
public:
    TreeService(std::shared_ptr<MultiverseTree> tree, std::shared_ptr<const GenerativeBackend> backend,
                std::shared_ptr<const PromptRefiner> refiner, MetricAdapters metrics = {});
    ~TreeService();
    TreeService(const TreeService&) = delete;
    TreeService& operator=(const TreeService&) = delete;

    /// Recovers the manifest (running -> failed, pending re-queued), binds and
    /// starts serving in the background. Port 0 picks a free port. Returns the
    /// bound port; throws IoError if the port cannot be bound.
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from another thread.
    void wait();
    void stop();

    /// Test hook, called on the worker thread just before a job runs.
    void set_on_job_start(std::function<void(const std::string& node_id)> hook);

    /// Blocks until the queue is empty and no job is executing.
    void drain();

    MultiverseTree& tree() { return *tree_; }

private:
    void enqueue(const std::string& node_id);
    void worker_loop();
    void install_routes();

    std::shared_ptr<MultiverseTree> tree_;
    std::shared_ptr<const GenerativeBackend> backend_;
    std::shared_ptr<const PromptRefiner> refiner_;
    MetricAdapters metrics_;
    std::unique_ptr<httplib::Server> server_;
    std::thread listen_thread_;
    std::thread worker_;

    std::mutex qmu_;
    std::condition_variable qcv_;
    std::deque<std::string> queue_;
    bool busy_ = false;
    bool stopping_ = false;
    std::function<void(const std::string&)> on_job_start_;
};

}  // namespace amk
