// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/fs_util.hpp"

#include <openssl/evp.h>

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "amk/error.hpp"
#include "amk/rng.hpp"

namespace amk {

namespace {

// Negative means disarmed.
std::atomic<long long> g_crash_point{-1};
std::atomic<long long> g_crash_skip{0};

void write_all(int fd, const char* data, std::size_t n, const fs::path& path) {
    while (n > 0) {
        ssize_t w = ::write(fd, data, n);
        if (w < 0) {
            if (errno == EINTR) continue;
            throw IoError("write failed for " + path.string() + ": " + std::strerror(errno));
        }
        data += w;
        n -= static_cast<std::size_t>(w);
    }
}

void fsync_directory(const fs::path& dir) {
    int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

}  // namespace

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    if (in.bad()) throw IoError("read failed for " + path.string());
    return os.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void commit_directory(const fs::path& staged, const fs::path& dir) {
    std::error_code ec;
    if (fs::exists(dir)) {
        const fs::path old = staging_path(dir);
        fs::rename(dir, old, ec);
        if (ec) throw IoError("cannot replace " + dir.string() + ": " + ec.message());
        fs::rename(staged, dir, ec);
        fs::remove_all(old);
    } else {
        fs::rename(staged, dir, ec);
    }
    if (ec) throw IoError("cannot move " + staged.string() + " to " + dir.string() + ": " + ec.message());
    fsync_directory(dir.parent_path());
}

fs::path staging_path(const fs::path& path) {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    std::string name = "." + path.filename().string() + ".tmp." + std::to_string(::getpid()) + "." +
                       std::to_string(counter++) + "." + to_hex(rd()).substr(8);
    return path.parent_path() / name;
}

void set_write_crash_point(std::optional<std::size_t> bytes, std::size_t skip_writes) {
    g_crash_skip.store(static_cast<long long>(skip_writes));
    g_crash_point.store(bytes ? static_cast<long long>(*bytes) : -1);
}

void atomic_write_file(const fs::path& path, std::string_view bytes) {
    const fs::path tmp = staging_path(path);
    int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw IoError("cannot create " + tmp.string() + ": " + std::strerror(errno));

    const long long crash = g_crash_point.load();
    try {
        if (crash >= 0 && g_crash_skip.fetch_sub(1) <= 0) {
            const std::size_t cut = std::min<std::size_t>(static_cast<std::size_t>(crash), bytes.size());
            write_all(fd, bytes.data(), cut, tmp);
            std::_Exit(86);
        }
        write_all(fd, bytes.data(), bytes.size(), tmp);
        if (::fsync(fd) != 0) throw IoError("fsync failed for " + tmp.string() + ": " + std::strerror(errno));
    } catch (...) {
        ::close(fd);
        ::unlink(tmp.c_str());
        throw;
    }
    ::close(fd);
    if (::rename(tmp.c_str(), path.c_str()) != 0) {
        const int err = errno;
        ::unlink(tmp.c_str());
        throw IoError("rename to " + path.string() + " failed: " + std::strerror(err));
    }
    fsync_directory(path.parent_path());
}

std::string to_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::uint64_t hash_file(const fs::path& path) { return fnv1a64(read_file(path)); }

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string base64_decode(std::string_view text) {
    std::string clean;
    clean.reserve(text.size());
    for (char c : text)
        if (c != '\n' && c != '\r') clean += c;
    if (clean.size() % 4 != 0) throw ValidationError("base64: length is not a multiple of 4");
    std::string out(clean.size() / 4 * 3, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
    if (n < 0) throw ValidationError("base64: invalid input");
    // EVP_DecodeBlock counts padding bytes as output.
    std::size_t size = static_cast<std::size_t>(n);
    for (std::size_t i = clean.size(); i > 0 && clean[i - 1] == '=' && size > 0; --i) --size;
    out.resize(size);
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace amk
