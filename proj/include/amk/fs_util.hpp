// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace amk {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path);
/// Plain (non-atomic) write; for files inside a staged directory.
void write_file(const fs::path& path, std::string_view bytes);

/// Moves a fully written staging directory to `dir`, replacing any existing one.
void commit_directory(const fs::path& staged, const fs::path& dir);

/// Writes to a sibling temp file, fsyncs it, renames over `path`, then fsyncs
/// the directory. Readers see either the old or the new content.
void atomic_write_file(const fs::path& path, std::string_view bytes);

/// Unique sibling path for staging `path` (same directory, so rename is atomic).
fs::path staging_path(const fs::path& path);

/// Fault injection: when set, the atomic_write_file following `skip_writes`
/// completed ones terminates the process with _Exit(86) after writing that
/// many bytes of the temp file.
/// Only meant for crash-safety tests running in a forked child.
void set_write_crash_point(std::optional<std::size_t> bytes, std::size_t skip_writes = 0);

std::string to_hex(std::uint64_t value);
std::uint64_t hash_file(const fs::path& path);

std::string base64_encode(std::string_view bytes);
/// Throws ValidationError on malformed input.
std::string base64_decode(std::string_view text);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace amk
