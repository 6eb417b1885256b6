// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/http_client.hpp"

#include <chrono>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "amk/error.hpp"

namespace amk {

namespace {

// Reserves the next send slot for `host` and returns when it is due.
std::chrono::steady_clock::time_point reserve_slot(const std::string& host, int min_interval_ms) {
    static std::mutex mu;
    static std::map<std::string, std::chrono::steady_clock::time_point> next_slot;
    const auto now = std::chrono::steady_clock::now();
    std::lock_guard lock(mu);
    auto& slot = next_slot[host];
    const auto due = std::max(now, slot);
    slot = due + std::chrono::milliseconds(min_interval_ms);
    return due;
}

}  // namespace

HttpResponse http_post_json(const std::string& base_url, const std::string& path, const std::string& body,
                            const HttpRequestOptions& options) {
    if (options.min_interval_ms > 0) std::this_thread::sleep_until(reserve_slot(base_url, options.min_interval_ms));

    httplib::Client client(base_url);
    if (!client.is_valid()) throw IoError("invalid endpoint URL '" + base_url + "'");
    const auto timeout = std::chrono::milliseconds(options.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    for (const auto& [k, v] : options.headers) headers.emplace(k, v);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) throw IoError("request to " + base_url + path + " failed: " + httplib::to_string(res.error()));
    return HttpResponse{res->status, res->body};
}

}  // namespace amk
