// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/error.hpp>
#include <geoscaffold/geometry.hpp>
#include <geoscaffold/image_io.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace geoscaffold::metrics {

using geometry::Vec3;

struct TrajectorySample {
    std::vector<Vec3> positions;
};

/// Camera centers (-R^T T) of every pose.
inline TrajectorySample camera_centers(const geometry::Trajectory &traj) {
    TrajectorySample s;
    s.positions.reserve(traj.size());
    for (const auto &pose : traj.poses) {
        s.positions.push_back(pose.center());
    }
    return s;
}

namespace detail {

inline void check_pair(const TrajectorySample &gt, const TrajectorySample &pred) {
    if (gt.positions.empty() || gt.positions.size() != pred.positions.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    "trajectory lengths differ or are empty: " + std::to_string(gt.positions.size()) +
                        " vs " + std::to_string(pred.positions.size()));
    }
}

} // namespace detail

/// Mean Euclidean displacement.
inline double ade(const TrajectorySample &gt, const TrajectorySample &pred) {
    detail::check_pair(gt, pred);
    double sum = 0.0;
    for (std::size_t t = 0; t < gt.positions.size(); ++t) {
        sum += (gt.positions[t] - pred.positions[t]).norm();
    }
    return sum / double(gt.positions.size());
}

/// Displacement at the final step.
inline double fde(const TrajectorySample &gt, const TrajectorySample &pred) {
    detail::check_pair(gt, pred);
    return (gt.positions.back() - pred.positions.back()).norm();
}

/// Planar float image with values nominally in [0,1]; interleaved channels.
struct Image {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 3;
    std::vector<double> data;

    double at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
        return data[(std::size_t(y) * width + x) * channels + c];
    }

    static Image filled(std::uint32_t w, std::uint32_t h, std::uint32_t c, double value) {
        return {w, h, c, std::vector<double>(std::size_t(w) * h * c, value)};
    }
};

inline Image from_rgb8(const image::RgbImage &img) {
    Image out{img.width, img.height, 3, {}};
    out.data.reserve(img.pixels.size() * 3);
    for (const Rgb8 &p : img.pixels) {
        out.data.push_back(p.r / 255.0);
        out.data.push_back(p.g / 255.0);
        out.data.push_back(p.b / 255.0);
    }
    return out;
}

inline void check_same_shape(const Image &a, const Image &b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels ||
        a.data.size() != b.data.size()) {
        throw Error(ErrorCode::DimensionMismatch, "images differ in shape");
    }
}

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) with a dynamic range of 1; +inf for identical images.
inline double psnr(const Image &a, const Image &b) {
    check_same_shape(a, b);
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        se += d * d;
    }
    if (se == 0.0) {
        return kInfinitePsnr;
    }
    return 10.0 * std::log10(double(a.data.size()) / se);
}

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

inline std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(size));
    const double mid = 0.5 * double(size - 1);
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        const double x = double(i) - mid;
        k[std::size_t(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
        total += k[std::size_t(i)];
    }
    for (double &v : k) {
        v /= total;
    }
    return k;
}

/// Mean structural similarity over all fully-contained Gaussian windows, averaged over channels.
inline double ssim(const Image &a, const Image &b, const SsimParams &params = {}) {
    check_same_shape(a, b);
    const int win = params.window;
    if (int(a.width) < win || int(a.height) < win) {
        throw Error(ErrorCode::TooSmall, "SSIM needs images at least " + std::to_string(win) +
                                             " pixels on each side");
    }
    const auto kernel = gaussian_kernel(win, params.sigma);
    const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
    const double c2 = std::pow(params.k2 * params.dynamic_range, 2);
    const std::size_t W = a.width, H = a.height;
    const std::size_t ow = W - std::size_t(win) + 1, oh = H - std::size_t(win) + 1;

    // Separable filtering of the five moment images: rows first, then columns.
    auto filter = [&](const std::vector<double> &src) {
        std::vector<double> tmp(H * ow, 0.0);
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k < win; ++k) {
                    s += kernel[std::size_t(k)] * src[y * W + x + std::size_t(k)];
                }
                tmp[y * ow + x] = s;
            }
        }
        std::vector<double> out(oh * ow, 0.0);
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k < win; ++k) {
                    s += kernel[std::size_t(k)] * tmp[(y + std::size_t(k)) * ow + x];
                }
                out[y * ow + x] = s;
            }
        }
        return out;
    };

    double total = 0.0;
    for (std::uint32_t c = 0; c < a.channels; ++c) {
        std::vector<double> x(W * H), y(W * H), xx(W * H), yy(W * H), xy(W * H);
        for (std::size_t i = 0; i < W * H; ++i) {
            x[i] = a.data[i * a.channels + c];
            y[i] = b.data[i * b.channels + c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter(x), my = filter(y), mxx = filter(xx), myy = filter(yy),
                   mxy = filter(xy);
        double sum = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = mxx[i] - mx[i] * mx[i];
            const double vy = myy[i] - my[i] * my[i];
            const double cxy = mxy[i] - mx[i] * my[i];
            sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += sum / double(mx.size());
    }
    return total / double(a.channels);
}

} // namespace geoscaffold::metrics
