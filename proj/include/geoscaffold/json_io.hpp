// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// JSON schemas shared by the CLI files and the HTTP service. Every top-level document carries
// "schema_version": 1; readers accept a missing version and reject any other.

#include <geoscaffold/dynamic_edit.hpp>
#include <geoscaffold/error.hpp>
#include <geoscaffold/geometry.hpp>
#include <geoscaffold/scene_synth.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

namespace geoscaffold::json_io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

namespace detail {

inline std::string join(const std::string &base, const std::string &field) {
    return base.empty() ? field : base + "." + field;
}

inline std::string index(const std::string &base, std::size_t i) {
    return base + "[" + std::to_string(i) + "]";
}

inline const json &require(const json &j, const char *key, const std::string &path) {
    if (!j.is_object()) {
        throw Error(ErrorCode::SchemaViolation, "expected an object", path);
    }
    const auto it = j.find(key);
    if (it == j.end()) {
        throw Error(ErrorCode::SchemaViolation, std::string("missing field '") + key + "'",
                    join(path, key));
    }
    return *it;
}

inline double number(const json &j, const std::string &path) {
    if (!j.is_number()) {
        throw Error(ErrorCode::SchemaViolation, "expected a number", path);
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
        throw Error(ErrorCode::SchemaViolation, "expected a finite number", path);
    }
    return v;
}

inline std::uint32_t positive_int(const json &j, const std::string &path) {
    if (!j.is_number_integer() || j.get<long long>() <= 0 ||
        j.get<long long>() > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorCode::SchemaViolation, "expected a positive integer", path);
    }
    return j.get<std::uint32_t>();
}

template <int N> Eigen::Matrix<double, N, 1> fixed_array(const json &j, const std::string &path) {
    if (!j.is_array() || j.size() != std::size_t(N)) {
        throw Error(ErrorCode::SchemaViolation,
                    "expected an array of " + std::to_string(N) + " numbers", path);
    }
    Eigen::Matrix<double, N, 1> v;
    for (int i = 0; i < N; ++i) {
        v(i) = number(j[std::size_t(i)], index(path, std::size_t(i)));
    }
    return v;
}

inline void check_version(const json &j, const std::string &path) {
    if (j.is_object() && j.contains("schema_version")) {
        const json &v = j["schema_version"];
        if (!v.is_number_integer() || v.get<int>() != kSchemaVersion) {
            throw Error(ErrorCode::SchemaViolation, "unsupported schema_version",
                        join(path, "schema_version"));
        }
    }
}

} // namespace detail

// --- poses and trajectories ------------------------------------------------

inline json pose_to_json(const geometry::CameraPose &pose) {
    json R = json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            R.push_back(pose.R(r, c));
        }
    }
    return json{{"R", R}, {"T", {pose.T.x(), pose.T.y(), pose.T.z()}}};
}

inline geometry::CameraPose pose_from_json(const json &j, const std::string &path) {
    const auto flat = detail::fixed_array<9>(detail::require(j, "R", path), detail::join(path, "R"));
    geometry::CameraPose pose;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            pose.R(r, c) = flat(3 * r + c);
        }
    }
    pose.T = detail::fixed_array<3>(detail::require(j, "T", path), detail::join(path, "T"));
    if (!pose.is_valid()) {
        throw Error(ErrorCode::SchemaViolation,
                    "rotation must be orthonormal with det +1 (error " +
                        std::to_string(pose.orthonormality_error()) + ")",
                    detail::join(path, "R"));
    }
    return pose;
}

inline json intrinsics_fields(const geometry::Intrinsics &intr) {
    return json{{"f", intr.f}, {"width", intr.width}, {"height", intr.height}};
}

inline geometry::Intrinsics intrinsics_from_json(const json &j, const std::string &path) {
    geometry::Intrinsics intr;
    intr.f = detail::number(detail::require(j, "f", path), detail::join(path, "f"));
    if (!(intr.f > 0.0)) {
        throw Error(ErrorCode::SchemaViolation, "focal length must be positive",
                    detail::join(path, "f"));
    }
    intr.width = detail::positive_int(detail::require(j, "width", path), detail::join(path, "width"));
    intr.height =
        detail::positive_int(detail::require(j, "height", path), detail::join(path, "height"));
    return intr;
}

inline json trajectory_to_json(const geometry::Trajectory &traj) {
    json j = intrinsics_fields(traj.intrinsics);
    j["schema_version"] = kSchemaVersion;
    json frames = json::array();
    for (const auto &pose : traj.poses) {
        frames.push_back(pose_to_json(pose));
    }
    j["frames"] = std::move(frames);
    return j;
}

inline geometry::Trajectory trajectory_from_json(const json &j, const std::string &path = {}) {
    detail::check_version(j, path);
    geometry::Trajectory traj;
    traj.intrinsics = intrinsics_from_json(j, path);
    const json &frames = detail::require(j, "frames", path);
    const std::string fpath = detail::join(path, "frames");
    if (!frames.is_array() || frames.empty()) {
        throw Error(ErrorCode::SchemaViolation, "expected a non-empty array", fpath);
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
        traj.poses.push_back(pose_from_json(frames[i], detail::index(fpath, i)));
    }
    return traj;
}

// --- edit tracks -------------------------------------------------------------

inline json edit_track_to_json(const edit::EditTrack &track) {
    json boxes = json::array();
    for (const auto &b : track.boxes) {
        boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
    }
    json j{{"object_id", track.object_id}, {"boxes", boxes}};
    if (track.depth_track) {
        j["depth_track"] = *track.depth_track;
    }
    return j;
}

inline edit::EditTrack edit_track_from_json(const json &j, const std::string &path) {
    edit::EditTrack track;
    const json &id = detail::require(j, "object_id", path);
    if (!id.is_string()) {
        throw Error(ErrorCode::SchemaViolation, "expected a string", detail::join(path, "object_id"));
    }
    track.object_id = id.get<std::string>();
    const json &boxes = detail::require(j, "boxes", path);
    const std::string bpath = detail::join(path, "boxes");
    if (!boxes.is_array() || boxes.empty()) {
        throw Error(ErrorCode::SchemaViolation, "expected a non-empty array", bpath);
    }
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto v = detail::fixed_array<4>(boxes[i], detail::index(bpath, i));
        edit::Box box{v(0), v(1), v(2), v(3)};
        if (!box.is_valid()) {
            throw Error(ErrorCode::SchemaViolation, "need x_min < x_max and y_min < y_max",
                        detail::index(bpath, i));
        }
        track.boxes.push_back(box);
    }
    if (j.contains("depth_track") && !j["depth_track"].is_null()) {
        const json &d = j["depth_track"];
        const std::string dpath = detail::join(path, "depth_track");
        if (!d.is_array()) {
            throw Error(ErrorCode::SchemaViolation, "expected an array", dpath);
        }
        track.depth_track.emplace();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double v = detail::number(d[i], detail::index(dpath, i));
            if (!(v > 0.0)) {
                throw Error(ErrorCode::SchemaViolation, "depth must be positive",
                            detail::index(dpath, i));
            }
            track.depth_track->push_back(v);
        }
    }
    return track;
}

/// Accepts either a bare array of tracks or {"schema_version": 1, "tracks": [...]}.
inline std::vector<edit::EditTrack> edit_tracks_from_json(const json &j,
                                                          const std::string &path = {}) {
    const json *arr = &j;
    std::string apath = path;
    if (j.is_object()) {
        detail::check_version(j, path);
        arr = &detail::require(j, "tracks", path);
        apath = detail::join(path, "tracks");
    }
    if (!arr->is_array()) {
        throw Error(ErrorCode::SchemaViolation, "expected an array of edit tracks", apath);
    }
    std::vector<edit::EditTrack> tracks;
    for (std::size_t i = 0; i < arr->size(); ++i) {
        tracks.push_back(edit_track_from_json((*arr)[i], detail::index(apath, i)));
    }
    return tracks;
}

inline json edit_tracks_to_json(const std::vector<edit::EditTrack> &tracks) {
    json arr = json::array();
    for (const auto &t : tracks) {
        arr.push_back(edit_track_to_json(t));
    }
    return json{{"schema_version", kSchemaVersion}, {"tracks", arr}};
}

// --- scene manifest ------------------------------------------------------------

inline json scene_config_to_json(const synth::SceneConfig &cfg) {
    return json{{"width", cfg.width},
                {"height", cfg.height},
                {"f", cfg.focal},
                {"num_frames", cfg.num_frames},
                {"num_static_boxes", cfg.num_static_boxes},
                {"cuboid_velocity",
                 {cfg.cuboid_velocity.x(), cfg.cuboid_velocity.y(), cfg.cuboid_velocity.z()}},
                {"camera_path", synth::to_string(cfg.camera_path)},
                {"camera_speed", cfg.camera_speed},
                {"camera_height", cfg.camera_height},
                {"yaw_rate_deg", cfg.yaw_rate_deg}};
}

/// Missing fields keep their defaults.
inline synth::SceneConfig scene_config_from_json(const json &j, const std::string &path = {}) {
    synth::SceneConfig cfg;
    if (j.is_null()) {
        return cfg;
    }
    if (!j.is_object()) {
        throw Error(ErrorCode::SchemaViolation, "expected an object", path);
    }
    auto opt_number = [&](const char *key, double &out) {
        if (j.contains(key)) {
            out = detail::number(j[key], detail::join(path, key));
        }
    };
    if (j.contains("width")) cfg.width = detail::positive_int(j["width"], detail::join(path, "width"));
    if (j.contains("height"))
        cfg.height = detail::positive_int(j["height"], detail::join(path, "height"));
    opt_number("f", cfg.focal);
    if (j.contains("num_frames"))
        cfg.num_frames = detail::positive_int(j["num_frames"], detail::join(path, "num_frames"));
    if (j.contains("num_static_boxes")) {
        const json &v = j["num_static_boxes"];
        if (!v.is_number_integer() || v.get<int>() < 0) {
            throw Error(ErrorCode::SchemaViolation, "expected a non-negative integer",
                        detail::join(path, "num_static_boxes"));
        }
        cfg.num_static_boxes = v.get<int>();
    }
    if (j.contains("cuboid_velocity"))
        cfg.cuboid_velocity =
            detail::fixed_array<3>(j["cuboid_velocity"], detail::join(path, "cuboid_velocity"));
    if (j.contains("camera_path")) {
        if (!j["camera_path"].is_string()) {
            throw Error(ErrorCode::SchemaViolation, "expected a string",
                        detail::join(path, "camera_path"));
        }
        cfg.camera_path = synth::camera_path_from_string(j["camera_path"].get<std::string>());
    }
    opt_number("camera_speed", cfg.camera_speed);
    opt_number("camera_height", cfg.camera_height);
    opt_number("yaw_rate_deg", cfg.yaw_rate_deg);
    return cfg;
}

inline json scene_manifest(std::uint64_t seed, const synth::SceneConfig &cfg) {
    return json{{"schema_version", kSchemaVersion}, {"seed", seed}, {"config", scene_config_to_json(cfg)}};
}

// --- files -------------------------------------------------------------------------

inline json read_json_file(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    try {
        return json::parse(is);
    } catch (const json::parse_error &e) {
        throw Error(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path &path, const json &j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    }
    os << j.dump(2) << '\n';
    if (!os) {
        throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
    }
}

} // namespace geoscaffold::json_io
