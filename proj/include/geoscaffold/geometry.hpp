// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/error.hpp>

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace geoscaffold::geometry {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

// ---------------------------------------------------------------------------
// SO(3) / SE(3)
// ---------------------------------------------------------------------------

inline Mat3 hat(const Vec3 &w) {
    Mat3 m;
    m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return m;
}

/// Rodrigues exponential of an axis-angle vector.
inline Mat3 so3_exp(const Vec3 &w) {
    const double theta2 = w.squaredNorm();
    const Mat3 K = hat(w);
    if (theta2 < 1e-20) {
        return Mat3::Identity() + K + 0.5 * K * K;
    }
    const double theta = std::sqrt(theta2);
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / theta2;
    return Mat3::Identity() + a * K + b * K * K;
}

/// Axis-angle vector of a rotation matrix, angle in [0, pi].
inline Vec3 so3_log(const Mat3 &R) {
    const Vec3 vee(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    const double cos_theta = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
    const double theta = std::atan2(0.5 * vee.norm(), cos_theta);
    if (theta < 1e-8) {
        return 0.5 * vee;
    }
    if (std::numbers::pi - theta < 1e-6) {
        // Near pi the antisymmetric part vanishes; the symmetric part is cos I + (1 - cos) a a^T.
        const Mat3 B = (0.5 * (R + R.transpose()) - cos_theta * Mat3::Identity()) / (1.0 - cos_theta);
        int k = 0;
        B.diagonal().maxCoeff(&k);
        Vec3 axis = B.col(k) / std::sqrt(std::max(B(k, k), 1e-300));
        if (axis.dot(vee) < 0.0) {
            axis = -axis;
        }
        return theta * axis.normalized();
    }
    return theta / (2.0 * std::sin(theta)) * vee;
}

/// Rotation about the camera/world y axis (vertical in a y-down frame).
inline Mat3 rotation_y(double angle_rad) { return so3_exp(Vec3(0.0, angle_rad, 0.0)); }

// ---------------------------------------------------------------------------
// Camera model
// ---------------------------------------------------------------------------

/// Pinhole camera with the principal point fixed at the image center.
struct Intrinsics {
    double f = 500.0;
    std::uint32_t width = 720;
    std::uint32_t height = 480;

    double cx() const noexcept { return 0.5 * double(width); }
    double cy() const noexcept { return 0.5 * double(height); }

    void validate() const {
        if (!(f > 0.0) || !std::isfinite(f)) {
            throw Error(ErrorCode::InvalidArgument, "focal length must be positive", "f");
        }
        if (width == 0 || height == 0) {
            throw Error(ErrorCode::InvalidArgument, "image dimensions must be non-zero", "width");
        }
    }

    friend bool operator==(const Intrinsics &, const Intrinsics &) = default;
};

inline constexpr double kOrthonormalTolerance = 1e-9;

/// World-to-camera rigid transform: p_cam = R * p_world + T.
struct CameraPose {
    Mat3 R = Mat3::Identity();
    Vec3 T = Vec3::Zero();

    static CameraPose identity() { return {}; }

    /// Pose whose camera center sits at `center` with world-to-camera rotation `R`.
    static CameraPose from_center(const Mat3 &R, const Vec3 &center) { return {R, -R * center}; }

    Vec3 center() const { return -R.transpose() * T; }
    Vec3 to_camera(const Vec3 &p_world) const { return R * p_world + T; }
    Vec3 to_world(const Vec3 &p_cam) const { return R.transpose() * (p_cam - T); }

    /// Largest deviation from RᵀR = I and det(R) = 1.
    double orthonormality_error() const {
        const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
        return std::max(ortho, std::abs(R.determinant() - 1.0));
    }

    bool is_valid(double tol = kOrthonormalTolerance) const {
        return R.allFinite() && T.allFinite() && orthonormality_error() <= tol;
    }

    friend bool operator==(const CameraPose &a, const CameraPose &b) {
        return a.R == b.R && a.T == b.T;
    }
};

/// SE(3) exponential of xi = (omega, v) applied on the left: exp(xi) * pose.
inline CameraPose apply_left_increment(const CameraPose &pose, const Vec6 &xi) {
    const Vec3 w = xi.head<3>();
    const Vec3 v = xi.tail<3>();
    const double theta2 = w.squaredNorm();
    const Mat3 K = hat(w);
    Mat3 V;
    if (theta2 < 1e-20) {
        V = Mat3::Identity() + 0.5 * K;
    } else {
        const double theta = std::sqrt(theta2);
        V = Mat3::Identity() + (1.0 - std::cos(theta)) / theta2 * K +
            (theta - std::sin(theta)) / (theta2 * theta) * K * K;
    }
    const Mat3 dR = so3_exp(w);
    return {dR * pose.R, dR * pose.T + V * v};
}

struct Trajectory {
    std::vector<CameraPose> poses;
    Intrinsics intrinsics;

    std::size_t size() const noexcept { return poses.size(); }

    void validate() const {
        intrinsics.validate();
        if (poses.empty()) {
            throw Error(ErrorCode::InvalidArgument, "trajectory must contain at least one pose",
                        "frames");
        }
        for (std::size_t i = 0; i < poses.size(); ++i) {
            if (!poses[i].is_valid()) {
                throw Error(ErrorCode::SchemaViolation, "rotation is not orthonormal",
                            "frames[" + std::to_string(i) + "].R");
            }
        }
    }
};

struct DepthRange {
    double min = 0.1;
    double max = 100.0;
};

struct Projection {
    Vec2 pixel;
    double depth = 0.0;
};

/// Projects without any validity test. Returns (u, v, z_cam).
inline Vec3 project_raw(const Vec3 &p_world, const CameraPose &pose, const Intrinsics &intr) {
    const Vec3 pc = pose.to_camera(p_world);
    return {intr.f * pc.x() / pc.z() + intr.cx(), intr.f * pc.y() / pc.z() + intr.cy(), pc.z()};
}

/// Pixel and depth of `p_world`, or nothing when the depth leaves `range` or the pixel leaves
/// [0,W)x[0,H).
inline std::optional<Projection> project_point(const Vec3 &p_world, const CameraPose &pose,
                                               const Intrinsics &intr, DepthRange range = {}) {
    const Vec3 pc = pose.to_camera(p_world);
    const double z = pc.z();
    if (!(z >= range.min && z <= range.max)) {
        return std::nullopt;
    }
    const double u = intr.f * pc.x() / z + intr.cx();
    const double v = intr.f * pc.y() / z + intr.cy();
    if (!(u >= 0.0 && u < double(intr.width) && v >= 0.0 && v < double(intr.height))) {
        return std::nullopt;
    }
    return Projection{Vec2(u, v), z};
}

/// World point seen at `pixel` with camera depth `depth`.
inline Vec3 backproject(const Vec2 &pixel, double depth, const CameraPose &pose,
                        const Intrinsics &intr) {
    const Vec3 pc((pixel.x() - intr.cx()) * depth / intr.f, (pixel.y() - intr.cy()) * depth / intr.f,
                  depth);
    return pose.to_world(pc);
}

// ---------------------------------------------------------------------------
// Pose estimation
// ---------------------------------------------------------------------------

struct Match {
    Vec3 world_point;
    Vec2 pixel;
};

/// Stacked residuals [u_i - obs_u, v_i - obs_v]_i.
inline Eigen::VectorXd reprojection_residuals(std::span<const Match> matches,
                                              const CameraPose &pose, const Intrinsics &intr) {
    Eigen::VectorXd r(2 * matches.size());
    for (std::size_t i = 0; i < matches.size(); ++i) {
        const Vec3 uvz = project_raw(matches[i].world_point, pose, intr);
        r(2 * i) = uvz.x() - matches[i].pixel.x();
        r(2 * i + 1) = uvz.y() - matches[i].pixel.y();
    }
    return r;
}

inline double reprojection_cost(std::span<const Match> matches, const CameraPose &pose,
                                const Intrinsics &intr) {
    return reprojection_residuals(matches, pose, intr).squaredNorm();
}

/// d(residuals)/d(xi) at xi = 0 for the left increment exp(xi) * pose; 2N x 6.
inline Eigen::MatrixXd reprojection_jacobian(std::span<const Match> matches,
                                             const CameraPose &pose, const Intrinsics &intr) {
    Eigen::MatrixXd J(2 * matches.size(), 6);
    for (std::size_t i = 0; i < matches.size(); ++i) {
        const Vec3 pc = pose.to_camera(matches[i].world_point);
        const double iz = 1.0 / pc.z();
        Eigen::Matrix<double, 2, 3> dproj;
        dproj << intr.f * iz, 0.0, -intr.f * pc.x() * iz * iz, 0.0, intr.f * iz,
            -intr.f * pc.y() * iz * iz;
        Eigen::Matrix<double, 3, 6> dpoint;
        dpoint.leftCols<3>() = -hat(pc);
        dpoint.rightCols<3>().setIdentity();
        J.middleRows<2>(2 * i) = dproj * dpoint;
    }
    return J;
}

struct LmOptions {
    double initial_lambda = 1e-3;
    double lambda_factor = 10.0;
    double max_lambda = 1e16;
    double step_tolerance = 1e-10;
    int max_iterations = 100;
};

struct PoseEstimate {
    CameraPose pose;
    double final_cost = 0.0;
    double initial_cost = 0.0;
    int iterations = 0;
    /// False when the iteration cap was hit before the step size converged; `pose` is then the
    /// best pose seen.
    bool converged = false;
};

inline constexpr std::size_t kMinPoseMatches = 6;

/// Levenberg-Marquardt minimization of the summed squared reprojection error over SE(3).
/// Only cost-decreasing steps are accepted, so the result never costs more than `init`.
inline PoseEstimate estimate_pose(std::span<const Match> matches, const Intrinsics &intr,
                                  const CameraPose &init, const LmOptions &opts = {}) {
    if (matches.size() < kMinPoseMatches) {
        throw Error(ErrorCode::DegenerateInput,
                    "pose estimation needs at least 6 matches, got " +
                        std::to_string(matches.size()));
    }
    if (!init.is_valid()) {
        throw Error(ErrorCode::InvalidArgument, "initial pose rotation is not orthonormal");
    }
    intr.validate();

    PoseEstimate est;
    est.pose = init;
    Eigen::VectorXd r = reprojection_residuals(matches, init, intr);
    est.initial_cost = est.final_cost = r.squaredNorm();
    if (!std::isfinite(est.initial_cost)) {
        throw Error(ErrorCode::DegenerateInput, "initial residuals are not finite");
    }

    {
        const Eigen::MatrixXd J = reprojection_jacobian(matches, init, intr);
        const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(J.transpose() * J);
        const auto ev = eig.eigenvalues();
        if (!(ev.maxCoeff() > 0.0) || ev.minCoeff() <= 1e-12 * ev.maxCoeff()) {
            throw Error(ErrorCode::DegenerateInput, "normal equations are rank deficient");
        }
    }

    double lambda = opts.initial_lambda;
    for (est.iterations = 0; est.iterations < opts.max_iterations; ++est.iterations) {
        const Eigen::MatrixXd J = reprojection_jacobian(matches, est.pose, intr);
        const Eigen::Matrix<double, 6, 6> A = J.transpose() * J;
        const Vec6 g = J.transpose() * r;

        bool accepted = false;
        while (!accepted) {
            Eigen::Matrix<double, 6, 6> damped = A;
            damped.diagonal() += lambda * A.diagonal();
            const Vec6 step = damped.ldlt().solve(-g);
            if (!step.allFinite()) {
                lambda *= opts.lambda_factor;
                if (lambda > opts.max_lambda) {
                    throw Error(ErrorCode::DegenerateInput,
                                "normal equations singular at the damping cap");
                }
                continue;
            }
            if (step.norm() < opts.step_tolerance) {
                est.converged = true;
                ++est.iterations;
                return est;
            }
            const CameraPose trial = apply_left_increment(est.pose, step);
            const Eigen::VectorXd r_trial = reprojection_residuals(matches, trial, intr);
            const double cost = r_trial.squaredNorm();
            if (std::isfinite(cost) && cost < est.final_cost) {
                est.pose = trial;
                est.final_cost = cost;
                r = r_trial;
                lambda = std::max(lambda / opts.lambda_factor, 1e-300);
                accepted = true;
            } else {
                lambda *= opts.lambda_factor;
                if (lambda > opts.max_lambda) {
                    // No descent direction left at any damping: a local minimum.
                    est.converged = true;
                    ++est.iterations;
                    return est;
                }
            }
        }
    }
    return est;
}

/// Angle of the relative rotation between two rotation matrices.
inline double rotation_angle_between(const Mat3 &a, const Mat3 &b) {
    return so3_log(a * b.transpose()).norm();
}

// ---------------------------------------------------------------------------
// Trajectory authoring
// ---------------------------------------------------------------------------

struct Waypoint {
    CameraPose pose;
    std::size_t frame = 0;
};

/// Per-frame poses: translation linear in frame index, rotation along the geodesic between
/// consecutive waypoints. Waypoint frames reproduce the waypoint pose exactly.
inline Trajectory interpolate_trajectory(std::span<const Waypoint> waypoints, std::size_t n_frames,
                                         const Intrinsics &intr) {
    if (waypoints.empty() || n_frames == 0) {
        throw Error(ErrorCode::BadWaypointOrder, "need at least one waypoint and one frame");
    }
    if (waypoints.front().frame != 0 || waypoints.back().frame != n_frames - 1) {
        throw Error(ErrorCode::BadWaypointOrder, "waypoints must start at frame 0 and end at n-1");
    }
    for (std::size_t i = 1; i < waypoints.size(); ++i) {
        if (waypoints[i].frame <= waypoints[i - 1].frame) {
            throw Error(ErrorCode::BadWaypointOrder, "waypoint frames must strictly increase",
                        "waypoints[" + std::to_string(i) + "].frame");
        }
    }
    for (std::size_t i = 0; i < waypoints.size(); ++i) {
        if (!waypoints[i].pose.is_valid()) {
            throw Error(ErrorCode::SchemaViolation, "rotation is not orthonormal",
                        "waypoints[" + std::to_string(i) + "].R");
        }
    }

    Trajectory traj;
    traj.intrinsics = intr;
    traj.poses.reserve(n_frames);
    traj.poses.push_back(waypoints.front().pose);
    for (std::size_t seg = 0; seg + 1 < waypoints.size(); ++seg) {
        const Waypoint &a = waypoints[seg];
        const Waypoint &b = waypoints[seg + 1];
        const Vec3 rel = so3_log(b.pose.R * a.pose.R.transpose());
        const double span = double(b.frame - a.frame);
        for (std::size_t k = a.frame + 1; k < b.frame; ++k) {
            const double s = double(k - a.frame) / span;
            traj.poses.push_back({so3_exp(s * rel) * a.pose.R, (1.0 - s) * a.pose.T + s * b.pose.T});
        }
        traj.poses.push_back(b.pose);
    }
    return traj;
}

/// Displaces every camera center by `lateral_offset` along that camera's own x axis.
inline Trajectory shift_trajectory(const Trajectory &traj, double lateral_offset) {
    Trajectory out = traj;
    for (CameraPose &pose : out.poses) {
        // center' = center + d * x_w  <=>  T' = T - d * R * x_w
        const Vec3 x_axis_world = pose.R.row(0).transpose();
        pose.T -= lateral_offset * (pose.R * x_axis_world);
    }
    return out;
}

} // namespace geoscaffold::geometry
