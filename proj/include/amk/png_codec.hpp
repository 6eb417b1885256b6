// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace amk {

/// Single-channel 16-bit image, row-major.
struct GrayImage16 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint16_t> pixels;

    friend bool operator==(const GrayImage16&, const GrayImage16&) = default;
};

/// Decodes any PNG to 16-bit linear gray. 16-bit gray input is returned
/// unchanged; colour or 8-bit input is converted. Throws IoError.
GrayImage16 decode_png(std::string_view bytes);

/// Encodes a 16-bit linear gray PNG.
std::string encode_png(const GrayImage16& image);

}  // namespace amk
