// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/diffusion/checkpoint.hpp>
#include <geoscaffold/diffusion/refine.hpp>
#include <geoscaffold/diffusion/train.hpp>
#include <geoscaffold/image_io.hpp>
#include <geoscaffold/json_io.hpp>
#include <geoscaffold/metrics.hpp>
#include <geoscaffold/renderer.hpp>
#include <geoscaffold/scene_synth.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

/// File-level building blocks shared by the command-line tool and the HTTP service.
namespace geoscaffold::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string frame_name(std::size_t t, const char *prefix = "frame_", const char *ext = ".png") {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%04zu%s", prefix, t, ext);
    return buf;
}

inline void ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error(ErrorCode::IoFailure, "cannot create directory " + dir.string() + ": " + ec.message());
    }
}

/// `frame_*.png` files of a directory in name order.
inline std::vector<fs::path> list_frames(const fs::path &dir) {
    if (!fs::is_directory(dir)) {
        throw Error(ErrorCode::IoFailure, "not a directory: " + dir.string());
    }
    std::vector<fs::path> out;
    for (const auto &entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("frame_", 0) == 0 && entry.path().extension() == ".png") {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) {
        throw Error(ErrorCode::IoFailure, "no frame_*.png files in " + dir.string());
    }
    return out;
}

inline std::vector<image::RgbImage> load_frames(const fs::path &dir) {
    std::vector<image::RgbImage> frames;
    for (const auto &p : list_frames(dir)) {
        frames.push_back(image::read_png(p));
    }
    return frames;
}

inline void write_frames(const fs::path &dir, std::span<const image::RgbImage> frames) {
    ensure_dir(dir);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        image::write_png(dir / frame_name(t), frames[t]);
    }
}

// --- synth ---------------------------------------------------------------------------

/// manifest.json, pointmap.gpm, trajectory.json, tracks.json and the oracle frames in gt/.
inline void write_synth(const fs::path &dir, std::uint64_t seed, const synth::SceneConfig &cfg) {
    ensure_dir(dir);
    const synth::ScenePackage pkg = synth::build_package(seed, cfg);
    const geometry::Trajectory &traj = pkg.scene.trajectory;
    json manifest = json_io::scene_manifest(seed, cfg);
    manifest["files"] = {{"pointmap", "pointmap.gpm"},
                         {"trajectory", "trajectory.json"},
                         {"tracks", "tracks.json"},
                         {"ground_truth", "gt"}};
    json_io::write_json_file(dir / "manifest.json", manifest);
    save_pointmap(pkg.pointmap, dir / "pointmap.gpm");
    json_io::write_json_file(dir / "trajectory.json", json_io::trajectory_to_json(traj));
    json_io::write_json_file(dir / "tracks.json", json_io::edit_tracks_to_json({pkg.track}));
    std::vector<image::RgbImage> gt;
    for (std::size_t t = 0; t < traj.size(); ++t) {
        gt.push_back(synth::oracle_render(pkg.scene, traj.poses[t], traj.intrinsics, t).rgb_image());
    }
    write_frames(dir / "gt", gt);
}

// --- render ----------------------------------------------------------------------------

struct RenderSettings {
    double tau = kDefaultConfidenceThreshold;
    render::RenderOptions options;
};

inline json render_settings_to_json(const RenderSettings &s) {
    return {{"tau", s.tau},
            {"splat_radius", s.options.splat_radius},
            {"depth_min", s.options.depth_min},
            {"depth_max", s.options.depth_max}};
}

inline RenderSettings render_settings_from_json(const json &j, const std::string &path) {
    RenderSettings s;
    if (j.is_null()) {
        return s;
    }
    if (!j.is_object()) {
        throw Error(ErrorCode::SchemaViolation, "expected an object", path);
    }
    if (j.contains("tau")) {
        s.tau = json_io::detail::number(j["tau"], json_io::detail::join(path, "tau"));
        if (!(s.tau >= 0.0 && s.tau <= 1.0)) {
            throw Error(ErrorCode::SchemaViolation, "tau must lie in [0,1]", json_io::detail::join(path, "tau"));
        }
    }
    if (j.contains("splat_radius")) {
        const json &r = j["splat_radius"];
        if (!r.is_number_integer() || r.get<int>() < 0 || r.get<int>() > 64) {
            throw Error(ErrorCode::SchemaViolation, "splat_radius must be an integer in [0,64]",
                        json_io::detail::join(path, "splat_radius"));
        }
        s.options.splat_radius = r.get<int>();
    }
    if (j.contains("depth_min")) {
        s.options.depth_min = json_io::detail::number(j["depth_min"], json_io::detail::join(path, "depth_min"));
    }
    if (j.contains("depth_max")) {
        s.options.depth_max = json_io::detail::number(j["depth_max"], json_io::detail::join(path, "depth_max"));
    }
    if (!(s.options.depth_min > 0.0 && s.options.depth_min < s.options.depth_max)) {
        throw Error(ErrorCode::SchemaViolation, "need 0 < depth_min < depth_max",
                    json_io::detail::join(path, "depth_min"));
    }
    return s;
}

/// Body of a render request; also what `render --request-out` writes.
struct RenderRequest {
    geometry::Trajectory trajectory;
    std::vector<edit::EditTrack> edits;
    RenderSettings settings;
};

inline json render_request_to_json(const RenderRequest &r) {
    json edits = json::array();
    for (const auto &t : r.edits) {
        edits.push_back(json_io::edit_track_to_json(t));
    }
    return {{"schema_version", json_io::kSchemaVersion},
            {"trajectory", json_io::trajectory_to_json(r.trajectory)},
            {"edits", edits},
            {"options", render_settings_to_json(r.settings)}};
}

inline RenderRequest render_request_from_json(const json &j) {
    if (!j.is_object()) {
        throw Error(ErrorCode::SchemaViolation, "request body must be a JSON object");
    }
    json_io::detail::check_version(j, "");
    RenderRequest r;
    r.trajectory = json_io::trajectory_from_json(json_io::detail::require(j, "trajectory", ""), "trajectory");
    if (j.contains("edits") && !j["edits"].is_null()) {
        r.edits = json_io::edit_tracks_from_json(j["edits"], "edits");
    }
    r.settings = render_settings_from_json(j.contains("options") ? j["options"] : json(), "options");
    for (std::size_t i = 0; i < r.edits.size(); ++i) {
        try {
            edit::validate_track(r.edits[i], r.trajectory.size());
        } catch (const Error &e) {
            throw Error(e.code(), e.what(),
                        "edits[" + std::to_string(i) + "]" + (e.path().empty() ? "" : "." + e.path()));
        }
    }
    return r;
}

/// Confidence-filtered render of every trajectory frame with the requested edits.
inline std::vector<render::RenderedFrame> run_render(const PointMap &pm, const RenderRequest &req) {
    const PointCloud cloud = threshold_cloud(pm, req.settings.tau);
    return render::render_sequence(cloud, req.trajectory, req.edits, req.settings.options);
}

/// frame_XXXX.png, valid_XXXX.png (1-bit) and depth_XXXX.bin per frame.
inline void write_render_outputs(const fs::path &dir, std::span<const render::RenderedFrame> frames) {
    ensure_dir(dir);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const auto &f = frames[t];
        image::write_png(dir / frame_name(t), image::RgbImage{f.width, f.height, f.rgb});
        geoscaffold::detail::write_file(dir / frame_name(t, "valid_"),
                                        image::encode_png_mask(f.width, f.height, f.valid));
        geoscaffold::detail::write_file(dir / frame_name(t, "depth_", ".bin"),
                                        image::encode_depth(f.width, f.height, f.depth));
    }
}

// --- pose ------------------------------------------------------------------------------

struct MatchSet {
    geometry::Intrinsics intrinsics;
    std::optional<geometry::CameraPose> init;
    std::vector<geometry::Match> matches;
    std::size_t dropped = 0;
};

/// Each match names a world point directly ("world": [x,y,z]) or a reference pixel
/// ("pixel": [row, col]) whose point-map position is used; "observed" is the [u, v] pixel in
/// the target view. Pixel matches on dynamic or low-confidence pixels are dropped.
inline MatchSet matches_from_json(const json &j, const PointMap &pm, double tau) {
    using json_io::detail::join;
    using json_io::detail::index;
    json_io::detail::check_version(j, "");
    MatchSet set;
    set.intrinsics = json_io::intrinsics_from_json(j, "");
    if (j.contains("init") && !j["init"].is_null()) {
        set.init = json_io::pose_from_json(j["init"], "init");
    }
    const json &arr = json_io::detail::require(j, "matches", "");
    if (!arr.is_array()) {
        throw Error(ErrorCode::SchemaViolation, "expected an array", "matches");
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = index("matches", i);
        const auto obs = json_io::detail::fixed_array<2>(json_io::detail::require(arr[i], "observed", path),
                                                         join(path, "observed"));
        geometry::Match m;
        m.pixel = obs;
        if (arr[i].contains("world")) {
            m.world_point = json_io::detail::fixed_array<3>(arr[i]["world"], join(path, "world"));
        } else {
            const auto px = json_io::detail::fixed_array<2>(json_io::detail::require(arr[i], "pixel", path),
                                                            join(path, "pixel"));
            if (px(0) < 0 || px(1) < 0 || px(0) >= pm.height || px(1) >= pm.width ||
                px(0) != std::floor(px(0)) || px(1) != std::floor(px(1))) {
                throw Error(ErrorCode::SchemaViolation, "pixel outside the point map", join(path, "pixel"));
            }
            const std::size_t k = pm.index(std::uint32_t(px(0)), std::uint32_t(px(1)));
            if (!pm.is_static(k) || !(pm.confidence[k] > float(tau))) {
                ++set.dropped;
                continue;
            }
            m.world_point = geometry::Vec3(pm.positions[k][0], pm.positions[k][1], pm.positions[k][2]);
        }
        set.matches.push_back(m);
    }
    return set;
}

inline json pose_estimate_to_json(const geometry::PoseEstimate &est, const MatchSet &set) {
    json j = json_io::pose_to_json(est.pose);
    j["schema_version"] = json_io::kSchemaVersion;
    j["initial_cost"] = est.initial_cost;
    j["final_cost"] = est.final_cost;
    j["iterations"] = est.iterations;
    j["converged"] = est.converged;
    j["matches_used"] = set.matches.size();
    j["matches_dropped"] = set.dropped;
    return j;
}

// --- training data ------------------------------------------------------------------

/// clip_XXXX/gt and clip_XXXX/render frame folders for `count` clips starting at `first_seed`.
inline void write_training_clips(const fs::path &dir, std::uint64_t first_seed, std::size_t count,
                                 std::uint32_t width = 96, std::uint32_t height = 64,
                                 std::size_t frames = 8) {
    ensure_dir(dir);
    for (std::size_t i = 0; i < count; ++i) {
        const synth::TrainingClip clip = synth::make_training_clip(first_seed + i, width, height, frames);
        const fs::path c = dir / frame_name(i, "clip_", "");
        write_frames(c / "gt", clip.ground_truth);
        write_frames(c / "render", clip.render);
    }
}

inline std::vector<diffusion::TrainingExample> load_training_clips(const fs::path &dir) {
    if (!fs::is_directory(dir)) {
        throw Error(ErrorCode::IoFailure, "not a directory: " + dir.string());
    }
    std::vector<fs::path> clips;
    for (const auto &entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("clip_", 0) == 0) {
            clips.push_back(entry.path());
        }
    }
    std::sort(clips.begin(), clips.end());
    if (clips.empty()) {
        throw Error(ErrorCode::IoFailure, "no clip_* folders in " + dir.string());
    }
    std::vector<diffusion::TrainingExample> out;
    for (const auto &c : clips) {
        out.push_back(diffusion::make_example(load_frames(c / "gt"), load_frames(c / "render")));
    }
    return out;
}

/// Model shape matching clips of the given frame size and length.
inline diffusion::DiTConfig config_for_clips(const diffusion::TrainingExample &ex) {
    diffusion::DiTConfig cfg;
    cfg.frames = int(ex.clean.frames);
    cfg.latent_height = int(ex.clean.height);
    cfg.latent_width = int(ex.clean.width);
    cfg.validate();
    return cfg;
}

// --- evaluate ---------------------------------------------------------------------

/// JSON numbers cannot hold infinity; an infinite PSNR is written as the string "inf".
inline json finite_or_inf(double v) {
    if (std::isinf(v) && v > 0) {
        return "inf";
    }
    return v;
}

struct Evaluation {
    double ade = 0.0, fde = 0.0, psnr_mean = 0.0, ssim_mean = 0.0;
    std::vector<double> psnr, ssim;
};

inline Evaluation evaluate(std::span<const image::RgbImage> gt, std::span<const image::RgbImage> pred,
                           const geometry::Trajectory &gt_traj, const geometry::Trajectory &pred_traj) {
    if (gt.size() != pred.size()) {
        throw Error(ErrorCode::LengthMismatch, "frame counts differ: " + std::to_string(gt.size()) +
                                                   " vs " + std::to_string(pred.size()));
    }
    Evaluation e;
    e.ade = metrics::ade(metrics::camera_centers(gt_traj), metrics::camera_centers(pred_traj));
    e.fde = metrics::fde(metrics::camera_centers(gt_traj), metrics::camera_centers(pred_traj));
    for (std::size_t t = 0; t < gt.size(); ++t) {
        const metrics::Image a = metrics::from_rgb8(gt[t]), b = metrics::from_rgb8(pred[t]);
        e.psnr.push_back(metrics::psnr(a, b));
        e.ssim.push_back(metrics::ssim(a, b));
        e.psnr_mean += e.psnr.back() / double(gt.size());
        e.ssim_mean += e.ssim.back() / double(gt.size());
    }
    return e;
}

inline json evaluation_to_json(const Evaluation &e) {
    json psnr = json::array(), ssim = json::array();
    for (double v : e.psnr) psnr.push_back(finite_or_inf(v));
    for (double v : e.ssim) ssim.push_back(v);
    return {{"schema_version", json_io::kSchemaVersion},
            {"ade", e.ade},
            {"fde", e.fde},
            {"psnr_mean", finite_or_inf(e.psnr_mean)},
            {"ssim_mean", e.ssim_mean},
            {"per_frame", {{"psnr", psnr}, {"ssim", ssim}}}};
}

inline json trajectory_metrics_to_json(const geometry::Trajectory &gt, const geometry::Trajectory &pred) {
    const auto a = metrics::camera_centers(gt), b = metrics::camera_centers(pred);
    return {{"schema_version", json_io::kSchemaVersion}, {"ade", metrics::ade(a, b)}, {"fde", metrics::fde(a, b)}};
}

// --- trajectory preview ----------------------------------------------------------

struct InterpolateRequest {
    std::vector<geometry::Waypoint> waypoints;
    std::size_t n_frames = 0;
    geometry::Intrinsics intrinsics;
};

/// {"n_frames", "f", "width", "height", "waypoints": [{"frame", "R", "T"}]}; intrinsics fall
/// back to `fallback` when absent.
inline InterpolateRequest interpolate_request_from_json(const json &j, const geometry::Intrinsics &fallback) {
    using json_io::detail::join;
    if (!j.is_object()) {
        throw Error(ErrorCode::SchemaViolation, "request body must be a JSON object");
    }
    json_io::detail::check_version(j, "");
    InterpolateRequest r;
    r.intrinsics = j.contains("f") ? json_io::intrinsics_from_json(j, "") : fallback;
    r.n_frames = json_io::detail::positive_int(json_io::detail::require(j, "n_frames", ""), "n_frames");
    const json &wps = json_io::detail::require(j, "waypoints", "");
    if (!wps.is_array()) {
        throw Error(ErrorCode::SchemaViolation, "expected an array", "waypoints");
    }
    for (std::size_t i = 0; i < wps.size(); ++i) {
        const std::string path = json_io::detail::index("waypoints", i);
        const json &fr = json_io::detail::require(wps[i], "frame", path);
        if (!fr.is_number_integer() || fr.get<long long>() < 0) {
            throw Error(ErrorCode::SchemaViolation, "frame must be a non-negative integer", join(path, "frame"));
        }
        r.waypoints.push_back({json_io::pose_from_json(wps[i], path), fr.get<std::size_t>()});
    }
    return r;
}

/// Interpolated trajectory plus, per frame, the pixel in the first view of the ground point
/// below that frame's camera (null when it falls behind the first camera).
inline json interpolate_preview(const InterpolateRequest &req) {
    const geometry::Trajectory traj = geometry::interpolate_trajectory(req.waypoints, req.n_frames, req.intrinsics);
    json path = json::array();
    for (const auto &pose : traj.poses) {
        geometry::Vec3 c = pose.center();
        c.y() = 0.0;
        const auto proj = geometry::project_point(c, traj.poses.front(), traj.intrinsics);
        if (proj) {
            path.push_back({proj->pixel.x(), proj->pixel.y()});
        } else {
            path.push_back(nullptr);
        }
    }
    return {{"schema_version", json_io::kSchemaVersion},
            {"trajectory", json_io::trajectory_to_json(traj)},
            {"ground_path", path}};
}

inline json error_to_json(const Error &e) {
    json err{{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
    if (!e.path().empty()) {
        err["path"] = e.path();
    }
    return {{"error", err}};
}

} // namespace geoscaffold::pipeline
