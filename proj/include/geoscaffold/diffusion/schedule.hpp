// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/diffusion/codec.hpp>

#include <cmath>
#include <numbers>
#include <random>

namespace geoscaffold::diffusion {

/// Cosine variance-preserving schedule on t in [0,1].
inline double alpha(double t) {
    if (t <= 0.0) return 1.0;
    if (t >= 1.0) return 0.0;
    return std::cos(0.5 * std::numbers::pi * t);
}

inline double sigma(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return std::sin(0.5 * std::numbers::pi * t);
}

inline LatentSequence forward_noise(const LatentSequence &z0, double t, const LatentSequence &eps) {
    require_same_shape(z0, eps, "forward_noise");
    if (!(t >= 0.0 && t <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "diffusion time must lie in [0,1]", "t");
    }
    LatentSequence out = z0;
    const double a = alpha(t), s = sigma(t);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = a * z0.data[i] + s * eps.data[i];
    }
    return out;
}

inline LatentSequence gaussian_like(const LatentSequence &shape, std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    LatentSequence out = shape;
    for (double &v : out.data) {
        v = n(rng);
    }
    return out;
}

} // namespace geoscaffold::diffusion
