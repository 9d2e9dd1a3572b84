// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/diffusion/dit.hpp>
#include <geoscaffold/diffusion/schedule.hpp>

namespace geoscaffold::diffusion {

struct SamplerOptions {
    int steps = 50;
    /// Lower bound on alpha when recovering the clean estimate.
    double eps_floor = 1e-3;
    /// Clamp the clean estimate to the data range [-1,1] before each update.
    bool clip_x0 = true;
};

/// Deterministic DDIM iteration on the uniform grid t_k = k / steps, k = steps..1.
inline LatentSequence sample(const DiT &model, const LatentSequence &z_T, const LatentSequence *z_r,
                             const SamplerOptions &opts = {}) {
    if (opts.steps < 1) {
        throw Error(ErrorCode::InvalidArgument, "sampler needs at least one step", "steps");
    }
    if (z_r) {
        require_same_shape(z_T, *z_r, "sample");
    }
    LatentSequence x = z_T;
    for (int k = opts.steps; k >= 1; --k) {
        const double t = double(k) / opts.steps;
        const double t_next = double(k - 1) / opts.steps;
        const LatentSequence eps = z_r ? model.conditioned_forward(x, t, *z_r)
                                       : model.backbone_forward(x, t);
        const double a = std::max(alpha(t), opts.eps_floor), s = sigma(t);
        const double a_next = alpha(t_next), s_next = sigma(t_next);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double x0 = (x.data[i] - s * eps.data[i]) / a;
            if (opts.clip_x0) {
                x0 = std::clamp(x0, -1.0, 1.0);
            }
            x.data[i] = a_next * x0 + s_next * eps.data[i];
        }
    }
    return x;
}

} // namespace geoscaffold::diffusion
