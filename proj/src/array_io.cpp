// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/array_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "amk/error.hpp"
#include "amk/fs_util.hpp"

namespace amk {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out += static_cast<char>(v & 0xFF);
    out += static_cast<char>(v >> 8);
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string encode_array(std::span<const std::size_t> dims, std::span<const float> data) {
    AMK_REQUIRE(!dims.empty() && dims.size() <= 3, "array file rank must be 1..3, got ", dims.size());
    std::size_t count = 1;
    for (auto d : dims) {
        AMK_REQUIRE(d <= 0xFFFFFFFFu, "array dimension too large");
        count *= d;
    }
    AMK_REQUIRE(count == data.size(), "array dims describe ", count, " values, data has ", data.size());

    std::string out;
    out.reserve(kArrayHeaderBytes + 4 * data.size());
    out += 'A';
    out += 'F';
    put_u16(out, static_cast<std::uint16_t>(dims.size()));
    for (std::size_t i = 0; i < 3; ++i) put_u32(out, i < dims.size() ? static_cast<std::uint32_t>(dims[i]) : 0u);
    for (float f : data) put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

FloatArray decode_array(std::string_view bytes) {
    if (bytes.size() < kArrayHeaderBytes) throw IoError("array file truncated: header incomplete");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (p[0] != 'A' || p[1] != 'F') throw IoError("array file has bad magic");
    const unsigned rank = p[2] | (p[3] << 8);
    if (rank < 1 || rank > 3) throw IoError("array file has invalid rank " + std::to_string(rank));

    FloatArray arr;
    std::size_t count = 1;
    for (unsigned i = 0; i < rank; ++i) {
        arr.dims.push_back(get_u32(p + 4 + 4 * i));
        count *= arr.dims.back();
    }
    if (bytes.size() != kArrayHeaderBytes + 4 * count)
        throw IoError("array file size " + std::to_string(bytes.size()) + " does not match header (" +
                      std::to_string(count) + " values)");
    arr.data.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        arr.data[i] = std::bit_cast<float>(get_u32(p + kArrayHeaderBytes + 4 * i));
    return arr;
}

void write_array(const std::filesystem::path& path, std::span<const std::size_t> dims, std::span<const float> data) {
    atomic_write_file(path, encode_array(dims, data));
}

FloatArray read_array(const std::filesystem::path& path) {
    try {
        return decode_array(read_file(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_block(const std::filesystem::path& path, const FeatureBlock& block) {
    const TokenLayout& l = block.layout();
    const std::size_t dims[3] = {l.heads, l.total_tokens(), l.head_dim};
    write_array(path, dims, block.values());
}

FeatureBlock read_block(const std::filesystem::path& path, const TokenLayout& layout) {
    FloatArray arr = read_array(path);
    if (arr.dims != std::vector<std::size_t>{layout.heads, layout.total_tokens(), layout.head_dim})
        throw IoError(path.string() + ": dims do not match the recorded token layout");
    return FeatureBlock(layout, std::move(arr.data));
}

}  // namespace amk
