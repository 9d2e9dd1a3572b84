// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/dynamic_edit.hpp>
#include <geoscaffold/geometry.hpp>
#include <geoscaffold/image_io.hpp>
#include <geoscaffold/pointmap_io.hpp>
#include <geoscaffold/renderer.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace geoscaffold::synth {

using geometry::CameraPose;
using geometry::Intrinsics;
using geometry::Mat3;
using geometry::Trajectory;
using geometry::Vec2;
using geometry::Vec3;

// World frame: x right, y down, z forward. The ground is the plane y = 0 and everything above
// it has negative y.

enum class CameraPath { Straight, Curved, Reverse };

inline std::string to_string(CameraPath p) {
    switch (p) {
    case CameraPath::Straight: return "straight";
    case CameraPath::Curved: return "curved";
    case CameraPath::Reverse: return "reverse";
    }
    return "straight";
}

inline CameraPath camera_path_from_string(const std::string &s) {
    if (s == "straight") return CameraPath::Straight;
    if (s == "curved") return CameraPath::Curved;
    if (s == "reverse") return CameraPath::Reverse;
    throw Error(ErrorCode::SchemaViolation, "unknown camera path '" + s + "'", "camera_path");
}

struct SceneConfig {
    std::uint32_t width = 720;
    std::uint32_t height = 480;
    double focal = 500.0;
    std::size_t num_frames = 16;
    int num_static_boxes = 4;
    Vec3 cuboid_velocity = Vec3(0.2, 0.0, 0.3);
    CameraPath camera_path = CameraPath::Straight;
    double camera_speed = 0.5;
    double camera_height = 1.5;
    /// Yaw rate of the curved path, degrees per frame.
    double yaw_rate_deg = 1.5;

    Intrinsics intrinsics() const { return {focal, width, height}; }
};

struct Cuboid {
    Vec3 min_corner = Vec3::Zero();
    Vec3 max_corner = Vec3::Zero();
    Rgb8 color;

    Vec3 center() const { return 0.5 * (min_corner + max_corner); }
    Cuboid translated(const Vec3 &d) const { return {min_corner + d, max_corner + d, color}; }
};

struct GroundPlane {
    double x_min = -40.0, x_max = 40.0;
    double z_min = -20.0, z_max = 90.0;
    double checker_size = 2.0;
    Rgb8 color_a{110, 110, 110};
    Rgb8 color_b{170, 165, 150};
};

struct SyntheticScene {
    std::uint64_t seed = 0;
    SceneConfig config;
    GroundPlane ground;
    std::vector<Cuboid> static_boxes;
    Cuboid dynamic_cuboid; ///< placement at frame 0
    Vec3 cuboid_velocity = Vec3::Zero();
    Rgb8 sky{140, 180, 230};
    Trajectory trajectory;

    Cuboid dynamic_at(std::size_t frame) const {
        return dynamic_cuboid.translated(double(frame) * cuboid_velocity);
    }
};

namespace detail {

inline Rgb8 random_color(std::mt19937_64 &rng) {
    std::uniform_int_distribution<int> d(40, 230);
    return Rgb8{std::uint8_t(d(rng)), std::uint8_t(d(rng)), std::uint8_t(d(rng))};
}

inline Rgb8 shade(Rgb8 c, double factor) {
    auto s = [factor](std::uint8_t v) {
        return std::uint8_t(std::clamp(std::lround(double(v) * factor), 0L, 255L));
    };
    return {s(c.r), s(c.g), s(c.b)};
}

inline Trajectory camera_trajectory(const SceneConfig &cfg) {
    Trajectory traj;
    traj.intrinsics = cfg.intrinsics();
    const double yaw_rate = cfg.yaw_rate_deg * std::numbers::pi / 180.0;
    Vec3 center(0.0, -cfg.camera_height, 0.0);
    double yaw = 0.0;
    const std::size_t half = cfg.num_frames / 2;
    for (std::size_t t = 0; t < cfg.num_frames; ++t) {
        const Mat3 cam_to_world = geometry::rotation_y(yaw);
        traj.poses.push_back(CameraPose::from_center(cam_to_world.transpose(), center));
        const Vec3 forward = cam_to_world * Vec3::UnitZ();
        switch (cfg.camera_path) {
        case CameraPath::Straight: center += cfg.camera_speed * forward; break;
        case CameraPath::Curved:
            center += cfg.camera_speed * forward;
            yaw += yaw_rate;
            break;
        case CameraPath::Reverse:
            center += (t + 1 < half ? 1.0 : -1.0) * cfg.camera_speed * forward;
            break;
        }
    }
    // Exact identity rotation at frame 0 keeps frame-0 depths equal to world z offsets.
    traj.poses.front().R = Mat3::Identity();
    traj.poses.front().T = Vec3(0.0, cfg.camera_height, 0.0);
    return traj;
}

} // namespace detail

/// Deterministic scene for a given seed and configuration.
inline SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig &cfg = {}) {
    std::mt19937_64 rng(seed);
    SyntheticScene scene;
    scene.seed = seed;
    scene.config = cfg;
    scene.cuboid_velocity = cfg.cuboid_velocity;
    scene.trajectory = detail::camera_trajectory(cfg);

    std::uniform_real_distribution<double> side(4.0, 12.0);
    std::uniform_real_distribution<double> depth(10.0, 60.0);
    std::uniform_real_distribution<double> footprint(1.0, 4.0);
    std::uniform_real_distribution<double> tall(1.0, 5.0);
    std::bernoulli_distribution left(0.5);
    for (int i = 0; i < cfg.num_static_boxes; ++i) {
        const double sx = footprint(rng), sz = footprint(rng), sy = tall(rng);
        const double cx = (left(rng) ? -1.0 : 1.0) * (side(rng) + 0.5 * sx);
        const double cz = depth(rng);
        scene.static_boxes.push_back(Cuboid{Vec3(cx - 0.5 * sx, -sy, cz - 0.5 * sz),
                                            Vec3(cx + 0.5 * sx, 0.0, cz + 0.5 * sz),
                                            detail::random_color(rng)});
    }
    // Straight ahead and taller than the camera, so only its rear face is visible at frame 0.
    const double height = std::max(cfg.camera_height + 0.1, 1.6);
    scene.dynamic_cuboid =
        Cuboid{Vec3(-0.9, -height, 12.0), Vec3(0.9, 0.0, 16.0), detail::random_color(rng)};
    return scene;
}

enum class HitKind : std::uint8_t { Sky, Ground, StaticBox, DynamicCuboid };

struct OracleFrame {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<Rgb8> rgb;
    std::vector<double> depth; ///< camera z; +inf for sky
    std::vector<Vec3> world;   ///< hit point; zero for sky
    std::vector<HitKind> kind;

    image::RgbImage rgb_image() const { return {width, height, rgb}; }
};

namespace detail {

/// Slab test; returns entry parameter and the face axis (0,1,2) of entry.
inline std::optional<std::pair<double, int>> ray_box(const Vec3 &o, const Vec3 &d,
                                                     const Cuboid &box) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int axis = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-300) {
            if (o[a] < box.min_corner[a] || o[a] > box.max_corner[a]) {
                return std::nullopt;
            }
            continue;
        }
        double t0 = (box.min_corner[a] - o[a]) / d[a];
        double t1 = (box.max_corner[a] - o[a]) / d[a];
        if (t0 > t1) {
            std::swap(t0, t1);
        }
        if (t0 > t_near) {
            t_near = t0;
            axis = a;
        }
        t_far = std::min(t_far, t1);
    }
    if (t_near > t_far || t_near <= 0.0 || axis < 0) {
        return std::nullopt;
    }
    return std::make_pair(t_near, axis);
}

inline Rgb8 face_color(const Cuboid &box, int axis) {
    static constexpr double kShade[3] = {0.8, 1.0, 0.65};
    return shade(box.color, kShade[axis]);
}

} // namespace detail

/// Analytic ray cast of the scene at `frame` (which places the dynamic cuboid).
inline OracleFrame oracle_render(const SyntheticScene &scene, const CameraPose &pose,
                                 const Intrinsics &intr, std::size_t frame = 0) {
    OracleFrame out;
    out.width = intr.width;
    out.height = intr.height;
    const std::size_t n = std::size_t(intr.width) * intr.height;
    out.rgb.assign(n, scene.sky);
    out.depth.assign(n, std::numeric_limits<double>::infinity());
    out.world.assign(n, Vec3::Zero());
    out.kind.assign(n, HitKind::Sky);

    const Vec3 origin = pose.center();
    const Mat3 Rt = pose.R.transpose();
    const Cuboid dyn = scene.dynamic_at(frame);
    const GroundPlane &g = scene.ground;

    for (std::uint32_t row = 0; row < intr.height; ++row) {
        for (std::uint32_t col = 0; col < intr.width; ++col) {
            // Pixel (row, col) is centered at (u, v) = (col, row).
            const Vec3 dir_cam((double(col) - intr.cx()) / intr.f, (double(row) - intr.cy()) / intr.f,
                               1.0);
            const Vec3 dir = Rt * dir_cam;
            double best = std::numeric_limits<double>::infinity();
            Rgb8 color = scene.sky;
            HitKind kind = HitKind::Sky;

            if (dir.y() > 0.0 && origin.y() < 0.0) {
                const double s = -origin.y() / dir.y();
                const Vec3 p = origin + s * dir;
                if (p.x() >= g.x_min && p.x() <= g.x_max && p.z() >= g.z_min && p.z() <= g.z_max) {
                    best = s;
                    const long cx = long(std::floor(p.x() / g.checker_size));
                    const long cz = long(std::floor(p.z() / g.checker_size));
                    color = ((cx + cz) & 1) ? g.color_b : g.color_a;
                    kind = HitKind::Ground;
                }
            }
            for (const Cuboid &box : scene.static_boxes) {
                if (const auto hit = detail::ray_box(origin, dir, box); hit && hit->first < best) {
                    best = hit->first;
                    color = detail::face_color(box, hit->second);
                    kind = HitKind::StaticBox;
                }
            }
            if (const auto hit = detail::ray_box(origin, dir, dyn); hit && hit->first < best) {
                best = hit->first;
                color = detail::face_color(dyn, hit->second);
                kind = HitKind::DynamicCuboid;
            }
            const std::size_t i = std::size_t(row) * intr.width + col;
            out.rgb[i] = color;
            out.kind[i] = kind;
            if (kind != HitKind::Sky) {
                // dir_cam has unit z, so the ray parameter is the camera depth.
                out.depth[i] = best;
                out.world[i] = origin + best * dir;
            }
        }
    }
    return out;
}

/// Point map as seen from `pose0`: confidence 1 on geometry, 0 on sky; dynamic pixels
/// flagged non-static.
inline PointMap export_pointmap(const SyntheticScene &scene, const CameraPose &pose0,
                                const Intrinsics &intr) {
    const OracleFrame frame = oracle_render(scene, pose0, intr, 0);
    PointMap pm = PointMap::zeros(intr.width, intr.height);
    pm.static_mask.emplace(pm.pixel_count(), 1);
    for (std::size_t i = 0; i < pm.pixel_count(); ++i) {
        pm.rgb[i] = frame.rgb[i];
        if (frame.kind[i] == HitKind::Sky) {
            continue;
        }
        pm.positions[i] = {float(frame.world[i].x()), float(frame.world[i].y()),
                           float(frame.world[i].z())};
        pm.confidence[i] = 1.0f;
        if (frame.kind[i] == HitKind::DynamicCuboid) {
            (*pm.static_mask)[i] = 0;
        }
    }
    return pm;
}

/// Ground-truth box and depth track of the dynamic cuboid along `traj`.
///
/// The frame-0 visible cuboid points are moved with the true velocity. Box centers are the
/// projections of their centroid and the half extents cover every moved point, so the center
/// and depth follow the same reference the editor uses when it places a segment.
inline edit::EditTrack ground_truth_track(const SyntheticScene &scene, const PointMap &pm,
                                          const Trajectory &traj, std::string object_id = "cuboid") {
    std::vector<Vec3> pts;
    for (std::size_t i = 0; i < pm.pixel_count(); ++i) {
        if (!pm.is_static(i) && pm.confidence[i] > 0.0f) {
            const auto &p = pm.positions[i];
            pts.emplace_back(p[0], p[1], p[2]);
        }
    }
    if (pts.empty()) {
        throw Error(ErrorCode::EmptySegment, "dynamic cuboid is not visible at frame 0");
    }
    Vec3 centroid = Vec3::Zero();
    for (const Vec3 &p : pts) {
        centroid += p;
    }
    centroid /= double(pts.size());

    edit::EditTrack track;
    track.object_id = std::move(object_id);
    track.depth_track.emplace();
    for (std::size_t t = 0; t < traj.size(); ++t) {
        const Vec3 d = double(t) * scene.cuboid_velocity;
        const Vec3 c = geometry::project_raw(centroid + d, traj.poses[t], traj.intrinsics);
        double hx = 0.0, hy = 0.0;
        for (const Vec3 &p : pts) {
            const Vec3 q = geometry::project_raw(p + d, traj.poses[t], traj.intrinsics);
            hx = std::max(hx, std::abs(q.x() - c.x()));
            hy = std::max(hy, std::abs(q.y() - c.y()));
        }
        hx += 0.5;
        hy += 0.5;
        track.boxes.push_back({c.x() - hx, c.y() - hy, c.x() + hx, c.y() + hy});
        track.depth_track->push_back(c.z());
    }
    return track;
}

/// Everything a test or pipeline run needs from one generated scene.
struct ScenePackage {
    SyntheticScene scene;
    PointMap pointmap;
    edit::EditTrack track;
};

inline ScenePackage build_package(std::uint64_t seed, const SceneConfig &cfg = {}) {
    ScenePackage pkg;
    pkg.scene = generate_scene(seed, cfg);
    const Trajectory &traj = pkg.scene.trajectory;
    pkg.pointmap = export_pointmap(pkg.scene, traj.poses.front(), traj.intrinsics);
    pkg.track = ground_truth_track(pkg.scene, pkg.pointmap, traj);
    return pkg;
}

/// Ground-truth video and the point-cloud rendering used as its condition.
struct TrainingClip {
    std::vector<image::RgbImage> ground_truth;
    std::vector<image::RgbImage> render;
};

/// Small clip for diffusion training: random path style, dynamic edits applied, holes black.
inline TrainingClip make_training_clip(std::uint64_t seed, std::uint32_t width = 96,
                                       std::uint32_t height = 64, std::size_t frames = 8) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    SceneConfig cfg;
    cfg.width = width;
    cfg.height = height;
    cfg.focal = 500.0 * double(width) / 720.0;
    cfg.num_frames = frames;
    cfg.camera_path = static_cast<CameraPath>(std::uniform_int_distribution<int>(0, 2)(rng));
    cfg.camera_speed = std::uniform_real_distribution<double>(0.3, 0.9)(rng);
    cfg.yaw_rate_deg = std::uniform_real_distribution<double>(-4.0, 4.0)(rng);
    cfg.cuboid_velocity = Vec3(std::uniform_real_distribution<double>(-0.3, 0.3)(rng), 0.0,
                               std::uniform_real_distribution<double>(0.0, 0.6)(rng));
    cfg.num_static_boxes = std::uniform_int_distribution<int>(2, 6)(rng);

    const ScenePackage pkg = build_package(seed, cfg);
    const Trajectory &traj = pkg.scene.trajectory;
    const PointCloud cloud = threshold_cloud(pkg.pointmap);
    const std::vector<edit::EditTrack> edits{pkg.track};
    const auto rendered = render::render_sequence(cloud, traj, edits);

    TrainingClip clip;
    for (std::size_t t = 0; t < traj.size(); ++t) {
        clip.ground_truth.push_back(
            oracle_render(pkg.scene, traj.poses[t], traj.intrinsics, t).rgb_image());
        clip.render.push_back({rendered[t].width, rendered[t].height, rendered[t].rgb});
    }
    return clip;
}

} // namespace geoscaffold::synth
