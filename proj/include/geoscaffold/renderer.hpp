// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/dynamic_edit.hpp>
#include <geoscaffold/geometry.hpp>
#include <geoscaffold/pointmap_io.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace geoscaffold::render {

using geometry::CameraPose;
using geometry::Intrinsics;
using geometry::Trajectory;

inline constexpr std::uint32_t kNoPoint = std::numeric_limits<std::uint32_t>::max();

struct RenderOptions {
    int splat_radius = 0;
    double depth_min = 0.1;
    double depth_max = 100.0;

    void validate() const {
        if (splat_radius < 0) {
            throw Error(ErrorCode::InvalidArgument, "splat radius must be >= 0", "splat_radius");
        }
        if (!(depth_min > 0.0 && depth_min < depth_max)) {
            throw Error(ErrorCode::InvalidArgument, "need 0 < depth_min < depth_max", "depth_min");
        }
    }
};

struct RenderedFrame {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<Rgb8> rgb;
    std::vector<std::uint8_t> valid;
    /// +inf where invalid.
    std::vector<float> depth;
    /// Index of the winning cloud point, kNoPoint where invalid.
    std::vector<std::uint32_t> point_index;

    std::size_t pixel_count() const noexcept { return std::size_t(width) * height; }

    friend bool operator==(const RenderedFrame &, const RenderedFrame &) = default;
};

namespace detail {

/// Orders candidates by (float depth, point index); positive floats sort like their bit pattern.
inline std::uint64_t depth_key(float depth, std::uint32_t index) {
    return (std::uint64_t(std::bit_cast<std::uint32_t>(depth)) << 32) | index;
}

} // namespace detail

/// Z-buffered point rendering. A point covers the (2r+1)^2 square around its rounded projection;
/// each pixel keeps the nearest covering point, ties going to the lowest cloud index.
inline RenderedFrame render_frame(const PointCloud &cloud, const CameraPose &pose,
                                  const Intrinsics &intr, const RenderOptions &opts = {}) {
    opts.validate();
    intr.validate();
    if (cloud.size() >= kNoPoint) {
        throw Error(ErrorCode::InvalidArgument, "point cloud too large for 32-bit indices");
    }
    const long W = long(intr.width);
    const long H = long(intr.height);
    const long r = opts.splat_radius;
    std::vector<std::uint64_t> zbuf(std::size_t(W * H), std::numeric_limits<std::uint64_t>::max());

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const geometry::Vec3 pc = pose.to_camera(cloud.points[i].position);
        const double z = pc.z();
        if (!(z >= opts.depth_min && z <= opts.depth_max)) {
            continue;
        }
        const double u = intr.f * pc.x() / z + intr.cx();
        const double v = intr.f * pc.y() / z + intr.cy();
        if (!(u > -double(r) - 1.0 && u < double(W + r) + 1.0 && v > -double(r) - 1.0 &&
              v < double(H + r) + 1.0)) {
            continue;
        }
        const long cu = long(std::floor(u + 0.5));
        const long cv = long(std::floor(v + 0.5));
        const long x0 = std::max(cu - r, 0L), x1 = std::min(cu + r, W - 1);
        const long y0 = std::max(cv - r, 0L), y1 = std::min(cv + r, H - 1);
        if (x0 > x1 || y0 > y1) {
            continue;
        }
        const std::uint64_t key = detail::depth_key(float(z), std::uint32_t(i));
        for (long y = y0; y <= y1; ++y) {
            std::uint64_t *row = zbuf.data() + y * W;
            for (long x = x0; x <= x1; ++x) {
                row[x] = std::min(row[x], key);
            }
        }
    }

    RenderedFrame frame;
    frame.width = intr.width;
    frame.height = intr.height;
    const std::size_t n = zbuf.size();
    frame.rgb.assign(n, Rgb8{});
    frame.valid.assign(n, 0);
    frame.depth.assign(n, std::numeric_limits<float>::infinity());
    frame.point_index.assign(n, kNoPoint);
    for (std::size_t p = 0; p < n; ++p) {
        if (zbuf[p] == std::numeric_limits<std::uint64_t>::max()) {
            continue;
        }
        const auto idx = std::uint32_t(zbuf[p] & 0xffffffffu);
        frame.valid[p] = 1;
        frame.depth[p] = std::bit_cast<float>(std::uint32_t(zbuf[p] >> 32));
        frame.point_index[p] = idx;
        frame.rgb[p] = cloud.points[idx].color;
    }
    return frame;
}

/// Renders `cloud` through every pose of `traj`, moving edited objects per frame.
inline std::vector<RenderedFrame> render_sequence(const PointCloud &cloud, const Trajectory &traj,
                                                  const edit::PreparedEdits &edits,
                                                  const RenderOptions &opts = {}) {
    traj.validate();
    std::vector<RenderedFrame> frames;
    frames.reserve(traj.size());
    for (std::size_t t = 0; t < traj.size(); ++t) {
        if (edits.empty()) {
            frames.push_back(render_frame(cloud, traj.poses[t], traj.intrinsics, opts));
        } else {
            frames.push_back(render_frame(edit::apply_edits(cloud, edits, t, traj), traj.poses[t],
                                          traj.intrinsics, opts));
        }
    }
    return frames;
}

inline std::vector<RenderedFrame> render_sequence(const PointCloud &cloud, const Trajectory &traj,
                                                  std::span<const edit::EditTrack> edits = {},
                                                  const RenderOptions &opts = {}) {
    traj.validate();
    return render_sequence(cloud, traj, edit::prepare_edits(cloud, edits, traj), opts);
}

} // namespace geoscaffold::render
