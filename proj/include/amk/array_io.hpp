// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Raw float array files. 16-byte little-endian header:
//   bytes 0-1   magic "AF"
//   bytes 2-3   rank (uint16, 1..3)
//   bytes 4-15  dims (3 x uint32; unused trailing dims are 0)
// followed by prod(dims) IEEE-754 binary32 values, little-endian.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "amk/attention_math.hpp"

namespace amk {

struct FloatArray {
    std::vector<std::size_t> dims;
    std::vector<float> data;
};

inline constexpr std::size_t kArrayHeaderBytes = 16;

std::string encode_array(std::span<const std::size_t> dims, std::span<const float> data);
FloatArray decode_array(std::string_view bytes);

void write_array(const std::filesystem::path& path, std::span<const std::size_t> dims, std::span<const float> data);
FloatArray read_array(const std::filesystem::path& path);

void write_block(const std::filesystem::path& path, const FeatureBlock& block);
/// Reads a [heads, tokens, head_dim] array and attaches `layout`, checking the dims agree.
FeatureBlock read_block(const std::filesystem::path& path, const TokenLayout& layout);

}  // namespace amk
