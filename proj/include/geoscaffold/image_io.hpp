// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/error.hpp>
#include <geoscaffold/pointmap_io.hpp>

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace geoscaffold::image {

/// 8-bit RGB raster, row-major.
struct RgbImage {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<Rgb8> pixels;

    friend bool operator==(const RgbImage &, const RgbImage &) = default;
};

namespace detail {

struct PngWriteState {
    std::vector<char> *out;
};

inline void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
    auto *state = static_cast<PngWriteState *>(png_get_io_ptr(png));
    state->out->insert(state->out->end(), reinterpret_cast<char *>(data),
                       reinterpret_cast<char *>(data) + len);
}

inline void png_flush_cb(png_structp) {}

struct PngReadState {
    std::span<const char> bytes;
    std::size_t offset = 0;
};

inline void png_read_cb(png_structp png, png_bytep data, png_size_t len) {
    auto *state = static_cast<PngReadState *>(png_get_io_ptr(png));
    if (state->offset + len > state->bytes.size()) {
        png_error(png, "read past end of buffer");
    }
    std::memcpy(data, state->bytes.data() + state->offset, len);
    state->offset += len;
}

[[noreturn]] inline void png_error_cb(png_structp, png_const_charp msg) {
    throw Error(ErrorCode::IoFailure, std::string("png: ") + msg);
}

inline void png_warning_cb(png_structp, png_const_charp) {}

/// Encodes rows of packed samples. `bit_depth` 8 with `color_type` RGB or GRAY, or 1 with GRAY.
inline std::vector<char> encode_png(std::uint32_t width, std::uint32_t height, int bit_depth,
                                    int color_type, const std::vector<std::vector<png_byte>> &rows) {
    std::vector<char> out;
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
    png_infop info = png_create_info_struct(png);
    try {
        PngWriteState state{&out};
        png_set_write_fn(png, &state, png_write_cb, png_flush_cb);
        png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (const auto &row : rows) {
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

} // namespace detail

inline std::vector<char> encode_png_rgb(const RgbImage &img) {
    std::vector<std::vector<png_byte>> rows(img.height, std::vector<png_byte>(img.width * 3));
    for (std::uint32_t y = 0; y < img.height; ++y) {
        for (std::uint32_t x = 0; x < img.width; ++x) {
            const Rgb8 &c = img.pixels[std::size_t(y) * img.width + x];
            rows[y][3 * x] = c.r;
            rows[y][3 * x + 1] = c.g;
            rows[y][3 * x + 2] = c.b;
        }
    }
    return detail::encode_png(img.width, img.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

/// 1-bit grayscale PNG; nonzero mask entries become white.
inline std::vector<char> encode_png_mask(std::uint32_t width, std::uint32_t height,
                                         std::span<const std::uint8_t> mask) {
    std::vector<std::vector<png_byte>> rows(height, std::vector<png_byte>((width + 7) / 8, 0));
    for (std::uint32_t y = 0; y < height; ++y) {
        for (std::uint32_t x = 0; x < width; ++x) {
            if (mask[std::size_t(y) * width + x]) {
                rows[y][x / 8] |= png_byte(0x80u >> (x % 8));
            }
        }
    }
    return detail::encode_png(width, height, 1, PNG_COLOR_TYPE_GRAY, rows);
}

/// Decodes any PNG into 8-bit RGB (gray is replicated, alpha dropped, 1-bit expanded to 0/255).
inline RgbImage decode_png(std::span<const char> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8)) {
        throw Error(ErrorCode::BadMagic, "not a PNG stream");
    }
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_cb, detail::png_warning_cb);
    png_infop info = png_create_info_struct(png);
    RgbImage img;
    try {
        detail::PngReadState state{bytes, 0};
        png_set_read_fn(png, &state, detail::png_read_cb);
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (depth == 16) {
            png_set_strip_16(png);
        }
        if (color == PNG_COLOR_TYPE_PALETTE) {
            png_set_palette_to_rgb(png);
        }
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
            png_set_expand_gray_1_2_4_to_8(png);
        }
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
            png_set_gray_to_rgb(png);
        }
        if (color & PNG_COLOR_MASK_ALPHA) {
            png_set_strip_alpha(png);
        }
        png_read_update_info(png, info);
        img.width = png_get_image_width(png, info);
        img.height = png_get_image_height(png, info);
        std::vector<png_byte> row(png_get_rowbytes(png, info));
        img.pixels.resize(std::size_t(img.width) * img.height);
        for (std::uint32_t y = 0; y < img.height; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (std::uint32_t x = 0; x < img.width; ++x) {
                img.pixels[std::size_t(y) * img.width + x] =
                    Rgb8{row[3 * x], row[3 * x + 1], row[3 * x + 2]};
            }
        }
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const std::filesystem::path &path, const RgbImage &img) {
    geoscaffold::detail::write_file(path, encode_png_rgb(img));
}

inline RgbImage read_png(const std::filesystem::path &path) {
    return decode_png(geoscaffold::detail::read_file(path));
}

/// Raw depth container: u32 width, u32 height, then width*height float32, little-endian.
inline std::vector<char> encode_depth(std::uint32_t width, std::uint32_t height,
                                      std::span<const float> depth) {
    if (depth.size() != std::size_t(width) * height) {
        throw Error(ErrorCode::DimensionMismatch, "depth grid does not match width*height");
    }
    std::vector<char> out;
    out.reserve(8 + depth.size() * 4);
    geoscaffold::detail::append_raw(out, &width, 1);
    geoscaffold::detail::append_raw(out, &height, 1);
    geoscaffold::detail::append_raw(out, depth.data(), depth.size());
    return out;
}

struct DepthImage {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<float> depth;
};

inline DepthImage decode_depth(std::span<const char> bytes) {
    if (bytes.size() < 8) {
        throw Error(ErrorCode::TruncatedFile, "depth header truncated");
    }
    DepthImage d;
    std::memcpy(&d.width, bytes.data(), 4);
    std::memcpy(&d.height, bytes.data() + 4, 4);
    const std::size_t n = std::size_t(d.width) * d.height;
    if (bytes.size() != 8 + 4 * n) {
        throw Error(bytes.size() < 8 + 4 * n ? ErrorCode::TruncatedFile
                                             : ErrorCode::DimensionMismatch,
                    "depth payload size mismatch");
    }
    d.depth.resize(n);
    std::memcpy(d.depth.data(), bytes.data() + 8, 4 * n);
    return d;
}

} // namespace geoscaffold::image
