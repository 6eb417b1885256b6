// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/png_codec.hpp"

#include <png.h>

#include <cstring>

#include "amk/error.hpp"

namespace amk {

GrayImage16 decode_png(std::string_view bytes) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw IoError(std::string("not a readable PNG: ") + image.message);

    image.format = PNG_FORMAT_LINEAR_Y;
    GrayImage16 out;
    out.width = image.width;
    out.height = image.height;
    out.pixels.resize(static_cast<std::size_t>(image.width) * image.height);
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError(std::string("PNG decode failed: ") + image.message);
    }
    return out;
}

std::string encode_png(const GrayImage16& img) {
    AMK_REQUIRE(img.width > 0 && img.height > 0 && img.pixels.size() == img.width * img.height,
                "encode_png: pixel buffer does not match ", img.width, "x", img.height);
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_LINEAR_Y;

    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(image, size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(std::string("PNG encode failed: ") + image.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(std::string("PNG encode failed: ") + image.message);
    out.resize(size);
    return out;
}

}  // namespace amk
