// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

namespace amk {

struct HttpResponse {
    int status = 0;
    std::string body;
};

struct HttpRequestOptions {
    std::vector<std::pair<std::string, std::string>> headers;
    int timeout_ms = 30000;
    /// Minimum spacing between requests to the same base URL, process-wide.
    int min_interval_ms = 0;
};

/// POST with a JSON body. `base_url` is "http[s]://host[:port]". Throws
/// IoError when the host cannot be reached; HTTP error statuses are returned.
HttpResponse http_post_json(const std::string& base_url, const std::string& path, const std::string& body,
                            const HttpRequestOptions& options = {});

}  // namespace amk
