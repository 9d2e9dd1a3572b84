// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/error.hpp>
#include <geoscaffold/geometry.hpp>
#include <geoscaffold/pointmap_io.hpp>

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geoscaffold::edit {

using geometry::CameraPose;
using geometry::Intrinsics;
using geometry::Trajectory;
using geometry::Vec2;
using geometry::Vec3;

/// Axis-aligned pixel rectangle at render resolution.
struct Box {
    double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

    Vec2 center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
    bool contains(const Vec2 &p) const {
        return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
    }
    bool is_valid() const { return x_min < x_max && y_min < y_max; }
    Box dilated(double margin) const {
        return {x_min - margin, y_min - margin, x_max + margin, y_max + margin};
    }

    friend bool operator==(const Box &, const Box &) = default;
};

/// A moving object described by one box per rendered frame and, optionally, its camera depth.
struct EditTrack {
    std::string object_id;
    std::vector<Box> boxes;
    std::optional<std::vector<double>> depth_track;

    friend bool operator==(const EditTrack &, const EditTrack &) = default;
};

struct ObjectSegment {
    std::vector<std::uint32_t> point_indices;
    Vec3 centroid = Vec3::Zero();
    double median_depth0 = 0.0;
};

namespace detail {

/// Linear-interpolated quantile of sorted values (q in [0,1]).
inline double quantile_sorted(std::span<const double> sorted, double q) {
    const double pos = q * double(sorted.size() - 1);
    const auto lo = std::size_t(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - double(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

} // namespace detail

/// Points whose frame-0 projection lies in `box0` and whose depth falls within
/// median +/- 1.5 IQR of the in-box depth distribution.
inline ObjectSegment select_object_points(const PointCloud &cloud, const CameraPose &pose0,
                                          const Intrinsics &intr, const Box &box0) {
    if (!box0.is_valid()) {
        throw Error(ErrorCode::InvalidArgument, "box must satisfy x_min < x_max and y_min < y_max");
    }
    std::vector<std::uint32_t> in_box;
    std::vector<double> depths;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto proj = geometry::project_point(cloud.points[i].position, pose0, intr);
        if (proj && box0.contains(proj->pixel)) {
            in_box.push_back(std::uint32_t(i));
            depths.push_back(proj->depth);
        }
    }
    if (in_box.empty()) {
        throw Error(ErrorCode::EmptySegment, "no cloud points project inside the frame-0 box");
    }

    std::vector<double> sorted = depths;
    std::sort(sorted.begin(), sorted.end());
    const double median = detail::quantile_sorted(sorted, 0.5);
    const double iqr = detail::quantile_sorted(sorted, 0.75) - detail::quantile_sorted(sorted, 0.25);
    const double half_width = 1.5 * iqr;

    ObjectSegment seg;
    std::vector<double> kept_depths;
    for (std::size_t k = 0; k < in_box.size(); ++k) {
        if (std::abs(depths[k] - median) <= half_width) {
            seg.point_indices.push_back(in_box[k]);
            seg.centroid += cloud.points[in_box[k]].position;
            kept_depths.push_back(depths[k]);
        }
    }
    if (seg.point_indices.empty()) {
        throw Error(ErrorCode::EmptySegment, "depth filtering rejected every in-box point");
    }
    seg.centroid /= double(seg.point_indices.size());
    std::sort(kept_depths.begin(), kept_depths.end());
    seg.median_depth0 = detail::quantile_sorted(kept_depths, 0.5);
    return seg;
}

/// World translation that carries the segment centroid onto the ray through the center of
/// `box_t`, at camera depth `depth_t` (default: the segment's frame-0 median depth).
inline Vec3 compute_object_transform(const ObjectSegment &seg, const Box &box_t,
                                     const CameraPose &pose_t, const Intrinsics &intr,
                                     std::optional<double> depth_t = std::nullopt) {
    const double d = depth_t.value_or(seg.median_depth0);
    return geometry::backproject(box_t.center(), d, pose_t, intr) - seg.centroid;
}

struct PreparedTrack {
    EditTrack track;
    ObjectSegment segment;
};

/// Tracks with their frame-0 segments extracted.
struct PreparedEdits {
    std::vector<PreparedTrack> tracks;
    bool empty() const noexcept { return tracks.empty(); }
};

inline void validate_track(const EditTrack &track, std::size_t n_frames) {
    if (track.boxes.size() < n_frames) {
        throw Error(ErrorCode::InvalidArgument,
                    "edit track '" + track.object_id + "' has " +
                        std::to_string(track.boxes.size()) + " boxes for " +
                        std::to_string(n_frames) + " frames",
                    "boxes");
    }
    for (std::size_t i = 0; i < track.boxes.size(); ++i) {
        if (!track.boxes[i].is_valid()) {
            throw Error(ErrorCode::SchemaViolation, "inverted box",
                        "boxes[" + std::to_string(i) + "]");
        }
    }
    if (track.depth_track) {
        if (track.depth_track->size() < n_frames) {
            throw Error(ErrorCode::InvalidArgument, "depth track shorter than trajectory",
                        "depth_track");
        }
        for (std::size_t i = 0; i < track.depth_track->size(); ++i) {
            const double d = (*track.depth_track)[i];
            if (!(d > 0.0) || !std::isfinite(d)) {
                throw Error(ErrorCode::SchemaViolation, "depth must be positive and finite",
                            "depth_track[" + std::to_string(i) + "]");
            }
        }
    }
}

/// Extracts every track's segment at frame 0 and rejects tracks that claim the same point.
inline PreparedEdits prepare_edits(const PointCloud &cloud, std::span<const EditTrack> edits,
                                   const Trajectory &traj) {
    PreparedEdits prepared;
    std::vector<std::uint8_t> owner(cloud.size(), 0);
    for (const EditTrack &track : edits) {
        validate_track(track, traj.size());
        ObjectSegment seg =
            select_object_points(cloud, traj.poses.front(), traj.intrinsics, track.boxes.front());
        for (std::uint32_t idx : seg.point_indices) {
            if (owner[idx]) {
                throw Error(ErrorCode::OverlappingSegments,
                            "track '" + track.object_id + "' overlaps an earlier track at point " +
                                std::to_string(idx));
            }
            owner[idx] = 1;
        }
        prepared.tracks.push_back({track, std::move(seg)});
    }
    return prepared;
}

/// Per-track world translation at frame `t`.
inline std::vector<Vec3> frame_transforms(const PreparedEdits &edits, std::size_t t,
                                          const Trajectory &traj) {
    std::vector<Vec3> deltas;
    deltas.reserve(edits.tracks.size());
    for (const PreparedTrack &pt : edits.tracks) {
        std::optional<double> depth;
        if (pt.track.depth_track) {
            depth = (*pt.track.depth_track)[t];
        }
        deltas.push_back(compute_object_transform(pt.segment, pt.track.boxes[t], traj.poses[t],
                                                  traj.intrinsics, depth));
    }
    return deltas;
}

/// Copy of `cloud` with each object's points rigidly translated to their frame-`t` placement.
inline PointCloud apply_edits(const PointCloud &cloud, const PreparedEdits &edits, std::size_t t,
                              const Trajectory &traj) {
    if (t >= traj.size()) {
        throw Error(ErrorCode::InvalidArgument, "frame index beyond trajectory length");
    }
    PointCloud out = cloud;
    const auto deltas = frame_transforms(edits, t, traj);
    for (std::size_t k = 0; k < edits.tracks.size(); ++k) {
        for (std::uint32_t idx : edits.tracks[k].segment.point_indices) {
            out.points[idx].position += deltas[k];
        }
    }
    return out;
}

inline PointCloud apply_edits(const PointCloud &cloud, std::span<const EditTrack> edits,
                              std::size_t t, const Trajectory &traj) {
    return apply_edits(cloud, prepare_edits(cloud, edits, traj), t, traj);
}

} // namespace geoscaffold::edit
