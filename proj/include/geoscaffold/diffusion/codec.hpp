// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/error.hpp>
#include <geoscaffold/image_io.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace geoscaffold::diffusion {

inline constexpr std::uint32_t kCodecFactor = 8;
inline constexpr std::uint32_t kLatentChannels = 3 * kCodecFactor * kCodecFactor;

/// L x C x h x w tensor stored frame-major, then channel, then row.
struct LatentSequence {
    std::uint32_t frames = 0;
    std::uint32_t channels = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<double> data;

    static LatentSequence zeros(std::uint32_t l, std::uint32_t c, std::uint32_t h, std::uint32_t w) {
        return {l, c, h, w, std::vector<double>(std::size_t(l) * c * h * w, 0.0)};
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t offset(std::uint32_t l, std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
        return ((std::size_t(l) * channels + c) * height + y) * width + x;
    }
    double &at(std::uint32_t l, std::uint32_t c, std::uint32_t y, std::uint32_t x) {
        return data[offset(l, c, y, x)];
    }
    double at(std::uint32_t l, std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
        return data[offset(l, c, y, x)];
    }
    bool same_shape(const LatentSequence &o) const {
        return frames == o.frames && channels == o.channels && height == o.height && width == o.width;
    }

    friend bool operator==(const LatentSequence &, const LatentSequence &) = default;
};

inline void require_same_shape(const LatentSequence &a, const LatentSequence &b, const char *what) {
    if (!a.same_shape(b) || a.size() != b.size()) {
        throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": latent shapes differ");
    }
}

/// Space-to-depth by 8: channel index is (rgb * 8 + dy) * 8 + dx, values are byte / 255.
inline LatentSequence encode_latent(std::span<const image::RgbImage> frames) {
    if (frames.empty()) {
        throw Error(ErrorCode::BadDimensions, "cannot encode an empty video");
    }
    const std::uint32_t W = frames[0].width, H = frames[0].height;
    if (W == 0 || H == 0 || W % kCodecFactor || H % kCodecFactor) {
        throw Error(ErrorCode::BadDimensions, "frame size " + std::to_string(W) + "x" +
                                                  std::to_string(H) + " is not a multiple of 8");
    }
    LatentSequence z = LatentSequence::zeros(std::uint32_t(frames.size()), kLatentChannels,
                                             H / kCodecFactor, W / kCodecFactor);
    for (std::uint32_t l = 0; l < z.frames; ++l) {
        const image::RgbImage &img = frames[l];
        if (img.width != W || img.height != H || img.pixels.size() != std::size_t(W) * H) {
            throw Error(ErrorCode::BadDimensions, "frames differ in size");
        }
        for (std::uint32_t y = 0; y < H; ++y) {
            for (std::uint32_t x = 0; x < W; ++x) {
                const Rgb8 &p = img.pixels[std::size_t(y) * W + x];
                const std::uint32_t sub = (y % kCodecFactor) * kCodecFactor + x % kCodecFactor;
                const std::uint32_t ly = y / kCodecFactor, lx = x / kCodecFactor;
                z.at(l, sub, ly, lx) = p.r / 255.0;
                z.at(l, 64 + sub, ly, lx) = p.g / 255.0;
                z.at(l, 128 + sub, ly, lx) = p.b / 255.0;
            }
        }
    }
    return z;
}

/// Inverse of encode_latent; values are clamped to [0,1] and rounded to the nearest byte.
inline std::vector<image::RgbImage> decode_latent(const LatentSequence &z) {
    if (z.channels != kLatentChannels || z.size() != std::size_t(z.frames) * z.channels * z.height * z.width) {
        throw Error(ErrorCode::BadDimensions, "latent does not have 192 channels");
    }
    const std::uint32_t W = z.width * kCodecFactor, H = z.height * kCodecFactor;
    auto byte = [](double v) {
        return std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    };
    std::vector<image::RgbImage> out(z.frames, image::RgbImage{W, H, {}});
    for (std::uint32_t l = 0; l < z.frames; ++l) {
        out[l].pixels.resize(std::size_t(W) * H);
        for (std::uint32_t y = 0; y < H; ++y) {
            for (std::uint32_t x = 0; x < W; ++x) {
                const std::uint32_t sub = (y % kCodecFactor) * kCodecFactor + x % kCodecFactor;
                const std::uint32_t ly = y / kCodecFactor, lx = x / kCodecFactor;
                out[l].pixels[std::size_t(y) * W + x] = {byte(z.at(l, sub, ly, lx)),
                                                         byte(z.at(l, 64 + sub, ly, lx)),
                                                         byte(z.at(l, 128 + sub, ly, lx))};
            }
        }
    }
    return out;
}

/// Affine map of every element: a * z + b.
inline LatentSequence affine(LatentSequence z, double a, double b) {
    for (double &v : z.data) {
        v = a * v + b;
    }
    return z;
}

/// [0,1] codec range to the model's [-1,1] range and back.
inline LatentSequence to_model_range(const LatentSequence &z) { return affine(z, 2.0, -1.0); }
inline LatentSequence from_model_range(const LatentSequence &z) { return affine(z, 0.5, 0.5); }

/// Area-weighted resampling of an RGB image to a new size.
inline image::RgbImage resize_area(const image::RgbImage &src, std::uint32_t width,
                                   std::uint32_t height) {
    if (src.width == width && src.height == height) {
        return src;
    }
    if (width == 0 || height == 0 || src.width == 0 || src.height == 0) {
        throw Error(ErrorCode::BadDimensions, "cannot resize to or from an empty image");
    }
    image::RgbImage out{width, height, std::vector<Rgb8>(std::size_t(width) * height)};
    const double sx = double(src.width) / width, sy = double(src.height) / height;
    for (std::uint32_t y = 0; y < height; ++y) {
        const double y0 = y * sy, y1 = (y + 1) * sy;
        for (std::uint32_t x = 0; x < width; ++x) {
            const double x0 = x * sx, x1 = (x + 1) * sx;
            double acc[3] = {0, 0, 0}, total = 0.0;
            for (auto yy = std::uint32_t(y0); yy < src.height && yy < y1; ++yy) {
                const double wy = std::min(y1, yy + 1.0) - std::max(y0, double(yy));
                for (auto xx = std::uint32_t(x0); xx < src.width && xx < x1; ++xx) {
                    const double w = wy * (std::min(x1, xx + 1.0) - std::max(x0, double(xx)));
                    const Rgb8 &p = src.pixels[std::size_t(yy) * src.width + xx];
                    acc[0] += w * p.r;
                    acc[1] += w * p.g;
                    acc[2] += w * p.b;
                    total += w;
                }
            }
            auto q = [total](double v) { return std::uint8_t(std::lround(std::clamp(v / total, 0.0, 255.0))); };
            out.pixels[std::size_t(y) * width + x] = {q(acc[0]), q(acc[1]), q(acc[2])};
        }
    }
    return out;
}

} // namespace geoscaffold::diffusion
