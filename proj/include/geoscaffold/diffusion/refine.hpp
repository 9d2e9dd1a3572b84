// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/diffusion/sampler.hpp>

namespace geoscaffold::diffusion {

/// Runs the conditioned sampler over a rendered video of any length and size. Frames are
/// area-resampled to the model resolution, split into windows of the model's frame count (the
/// last window repeats its final frame), and the result is resampled back.
inline std::vector<image::RgbImage> refine_video(const DiT &model,
                                                 std::span<const image::RgbImage> renders,
                                                 const SamplerOptions &opts = {},
                                                 std::uint64_t seed = 0) {
    if (renders.empty()) {
        return {};
    }
    const DiTConfig &cfg = model.config();
    const auto mw = std::uint32_t(cfg.latent_width) * kCodecFactor;
    const auto mh = std::uint32_t(cfg.latent_height) * kCodecFactor;
    const std::size_t window = std::size_t(cfg.frames);
    std::mt19937_64 rng(seed);

    std::vector<image::RgbImage> out;
    for (std::size_t start = 0; start < renders.size(); start += window) {
        std::vector<image::RgbImage> chunk;
        for (std::size_t k = 0; k < window; ++k) {
            const std::size_t idx = std::min(start + k, renders.size() - 1);
            chunk.push_back(resize_area(renders[idx], mw, mh));
        }
        const LatentSequence z_r = to_model_range(encode_latent(chunk));
        const LatentSequence z_T = gaussian_like(z_r, rng);
        const auto frames = decode_latent(from_model_range(sample(model, z_T, &z_r, opts)));
        for (std::size_t k = 0; k < window && start + k < renders.size(); ++k) {
            out.push_back(resize_area(frames[k], renders[start + k].width, renders[start + k].height));
        }
    }
    return out;
}

} // namespace geoscaffold::diffusion
