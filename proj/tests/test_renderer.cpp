// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include <geoscaffold/image_io.hpp>
#include <geoscaffold/renderer.hpp>
#include <geoscaffold/scene_synth.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>

namespace geoscaffold::render {
namespace {

using geometry::Vec3;

const Intrinsics kSmall{60.0, 64, 48};

CloudPoint point(double x, double y, double z, Rgb8 c) { return {Vec3(x, y, z), c, {}}; }

PointCloud random_cloud(std::size_t n, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> xy(-4.0, 4.0), z(-1.0, 30.0);
    std::uniform_int_distribution<int> c(0, 255);
    PointCloud cloud;
    for (std::size_t i = 0; i < n; ++i) {
        cloud.points.push_back(point(xy(rng), 0.7 * xy(rng), z(rng),
                                     Rgb8{std::uint8_t(c(rng)), std::uint8_t(c(rng)),
                                          std::uint8_t(c(rng))}));
    }
    return cloud;
}

/// Per-pixel scan over every point; written independently of the z-buffer loop.
RenderedFrame brute_force(const PointCloud &cloud, const CameraPose &pose, const Intrinsics &intr,
                          const RenderOptions &opts) {
    RenderedFrame out;
    out.width = intr.width;
    out.height = intr.height;
    const std::size_t n = out.pixel_count();
    out.rgb.assign(n, Rgb8{});
    out.valid.assign(n, 0);
    out.depth.assign(n, std::numeric_limits<float>::infinity());
    out.point_index.assign(n, kNoPoint);
    for (std::uint32_t row = 0; row < intr.height; ++row) {
        for (std::uint32_t col = 0; col < intr.width; ++col) {
            const std::size_t p = std::size_t(row) * intr.width + col;
            for (std::uint32_t i = 0; i < cloud.size(); ++i) {
                const Vec3 uvz = geometry::project_raw(cloud.points[i].position, pose, intr);
                if (uvz.z() < opts.depth_min || uvz.z() > opts.depth_max) {
                    continue;
                }
                const double du = std::abs(std::floor(uvz.x() + 0.5) - double(col));
                const double dv = std::abs(std::floor(uvz.y() + 0.5) - double(row));
                if (std::max(du, dv) > double(opts.splat_radius)) {
                    continue;
                }
                const float z = float(uvz.z());
                if (!out.valid[p] || z < out.depth[p]) {
                    out.valid[p] = 1;
                    out.depth[p] = z;
                    out.point_index[p] = i;
                    out.rgb[p] = cloud.points[i].color;
                }
            }
        }
    }
    return out;
}

void expect_frame_invariants(const RenderedFrame &f, const RenderOptions &opts) {
    for (std::size_t p = 0; p < f.pixel_count(); ++p) {
        if (f.valid[p]) {
            ASSERT_GE(f.depth[p], float(opts.depth_min));
            ASSERT_LE(f.depth[p], float(opts.depth_max));
            ASSERT_NE(f.point_index[p], kNoPoint);
        } else {
            ASSERT_TRUE(std::isinf(f.depth[p]));
            ASSERT_EQ(f.point_index[p], kNoPoint);
        }
    }
}

TEST(RenderFrame, NearerPointWinsSharedPixel) {
    PointCloud cloud;
    cloud.points.push_back(point(0, 0, 7, {255, 0, 0}));
    cloud.points.push_back(point(0, 0, 5, {0, 255, 0}));
    const RenderedFrame f = render_frame(cloud, CameraPose::identity(), kSmall);
    const std::size_t p = 24 * 64 + 32;
    EXPECT_TRUE(f.valid[p]);
    EXPECT_EQ(f.rgb[p], (Rgb8{0, 255, 0}));
    EXPECT_EQ(f.depth[p], 5.0f);
    EXPECT_EQ(f.point_index[p], 1u);
    EXPECT_EQ(std::count(f.valid.begin(), f.valid.end(), 1), 1);
}

TEST(RenderFrame, EqualDepthTieGoesToLowestIndex) {
    PointCloud cloud;
    cloud.points.push_back(point(0, 0, 5, {1, 2, 3}));
    cloud.points.push_back(point(0, 0, 5, {4, 5, 6}));
    const RenderedFrame f = render_frame(cloud, CameraPose::identity(), kSmall);
    EXPECT_EQ(f.point_index[24 * 64 + 32], 0u);
    std::swap(cloud.points[0], cloud.points[1]);
    const RenderedFrame g = render_frame(cloud, CameraPose::identity(), kSmall);
    EXPECT_EQ(g.rgb[24 * 64 + 32], (Rgb8{4, 5, 6}));
}

TEST(RenderFrame, EmptyCloudIsAllInvalid) {
    const RenderedFrame f = render_frame(PointCloud{}, CameraPose::identity(), kSmall);
    EXPECT_TRUE(std::all_of(f.valid.begin(), f.valid.end(), [](auto v) { return v == 0; }));
    EXPECT_TRUE(std::all_of(f.depth.begin(), f.depth.end(), [](float d) { return std::isinf(d); }));
}

TEST(RenderFrame, MatchesBruteForceOracle) {
    std::mt19937_64 rng(21);
    for (int radius : {0, 1, 2}) {
        const PointCloud cloud = random_cloud(1000, rng);
        RenderOptions opts;
        opts.splat_radius = radius;
        const CameraPose pose{geometry::rotation_y(0.1), Vec3(0.2, -0.1, 0.5)};
        const RenderedFrame fast = render_frame(cloud, pose, kSmall, opts);
        const RenderedFrame slow = brute_force(cloud, pose, kSmall, opts);
        EXPECT_TRUE(fast == slow) << "radius " << radius;
        expect_frame_invariants(fast, opts);
    }
}

TEST(RenderFrame, SplatCoversClippedSquare) {
    PointCloud cloud;
    cloud.points.push_back(point(0, 0, 10, {9, 9, 9}));
    // Projects to column 0, row 24: the square is clipped on the left.
    cloud.points.push_back(point(-32.0 * 10.0 / 60.0, 0, 10, {7, 7, 7}));
    RenderOptions opts;
    opts.splat_radius = 2;
    const RenderedFrame f = render_frame(cloud, CameraPose::identity(), kSmall, opts);
    EXPECT_EQ(std::count(f.valid.begin(), f.valid.end(), 1), 25 + 15);
    for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
            EXPECT_EQ(f.rgb[std::size_t((24 + dy) * 64 + 32 + dx)], (Rgb8{9, 9, 9}));
        }
        for (int dx = 0; dx <= 2; ++dx) {
            EXPECT_EQ(f.rgb[std::size_t((24 + dy) * 64 + dx)], (Rgb8{7, 7, 7}));
        }
    }
}

TEST(RenderFrame, OffscreenCenterStillSplatsIntoImage) {
    PointCloud cloud;
    // Rounded center one pixel left of the image; radius 1 reaches column 0.
    cloud.points.push_back(point(-33.0 * 10.0 / 60.0, 0, 10, {5, 5, 5}));
    RenderOptions opts;
    opts.splat_radius = 1;
    const RenderedFrame f = render_frame(cloud, CameraPose::identity(), kSmall, opts);
    EXPECT_EQ(std::count(f.valid.begin(), f.valid.end(), 1), 3);
    EXPECT_TRUE(f.valid[std::size_t(24 * 64)]);
}

TEST(RenderFrame, DepthClampAndOcclusionProperty) {
    std::mt19937_64 rng(22);
    RenderOptions opts;
    opts.depth_min = 2.0;
    opts.depth_max = 12.0;
    opts.splat_radius = 1;
    const PointCloud cloud = random_cloud(3000, rng);
    const RenderedFrame f = render_frame(cloud, CameraPose::identity(), kSmall, opts);
    expect_frame_invariants(f, opts);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 uvz = geometry::project_raw(cloud.points[i].position, CameraPose::identity(), kSmall);
        if (uvz.z() < opts.depth_min || uvz.z() > opts.depth_max) {
            continue;
        }
        const long cu = long(std::floor(uvz.x() + 0.5)), cv = long(std::floor(uvz.y() + 0.5));
        for (long y = cv - 1; y <= cv + 1; ++y) {
            for (long x = cu - 1; x <= cu + 1; ++x) {
                if (x < 0 || y < 0 || x >= 64 || y >= 48) {
                    continue;
                }
                const std::size_t p = std::size_t(y * 64 + x);
                ASSERT_TRUE(f.valid[p]);
                ASSERT_LE(f.depth[p], float(uvz.z()));
            }
        }
    }
}

TEST(RenderFrame, PermutationInvariantWithoutTies) {
    std::mt19937_64 rng(23);
    const PointCloud cloud = random_cloud(2000, rng);
    std::vector<std::uint32_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloud shuffled;
    for (std::uint32_t k : perm) {
        shuffled.points.push_back(cloud.points[k]);
    }
    const RenderedFrame a = render_frame(cloud, CameraPose::identity(), kSmall);
    const RenderedFrame b = render_frame(shuffled, CameraPose::identity(), kSmall);
    EXPECT_EQ(a.rgb, b.rgb);
    EXPECT_EQ(a.valid, b.valid);
    EXPECT_EQ(a.depth, b.depth);
    for (std::size_t p = 0; p < a.pixel_count(); ++p) {
        if (b.valid[p]) {
            EXPECT_EQ(perm[b.point_index[p]], a.point_index[p]);
        }
    }
    EXPECT_TRUE(render_frame(cloud, CameraPose::identity(), kSmall) == a);
}

TEST(RenderFrame, RejectsBadOptions) {
    RenderOptions neg;
    neg.splat_radius = -1;
    EXPECT_GS_ERROR(render_frame(PointCloud{}, CameraPose::identity(), kSmall, neg), InvalidArgument);
    RenderOptions inverted;
    inverted.depth_min = 5.0;
    inverted.depth_max = 1.0;
    EXPECT_GS_ERROR(render_frame(PointCloud{}, CameraPose::identity(), kSmall, inverted),
                    InvalidArgument);
}

TEST(RenderFrame, FrameZeroReproducesPointMapColors) {
    const synth::ScenePackage pkg = synth::build_package(5);
    const Trajectory &traj = pkg.scene.trajectory;
    const PointCloud cloud = threshold_cloud(pkg.pointmap);
    const RenderedFrame f = render_frame(cloud, traj.poses[0], traj.intrinsics);
    std::size_t checked = 0;
    for (const CloudPoint &cp : cloud.points) {
        const double z = traj.poses[0].to_camera(cp.position).z();
        if (z < 0.1 || z > 100.0) {
            continue;
        }
        const std::size_t p = std::size_t(cp.source_pixel.row) * f.width + cp.source_pixel.col;
        ASSERT_TRUE(f.valid[p]);
        ASSERT_EQ(f.rgb[p], pkg.pointmap.rgb[p]);
        ++checked;
    }
    EXPECT_GT(checked, f.pixel_count() / 3);
}

TEST(RenderSequence, StaticTrajectoryAndSingleFrame) {
    std::mt19937_64 rng(24);
    const PointCloud cloud = random_cloud(500, rng);
    const CameraPose pose{geometry::rotation_y(-0.05), Vec3(0.1, 0.0, 0.0)};
    const Trajectory one{{pose}, kSmall};
    const auto single = render_sequence(cloud, one);
    ASSERT_EQ(single.size(), 1u);
    EXPECT_TRUE(single[0] == render_frame(cloud, pose, kSmall));

    const Trajectory still{std::vector<CameraPose>(5, pose), kSmall};
    const auto frames = render_sequence(cloud, still);
    ASSERT_EQ(frames.size(), 5u);
    for (const auto &f : frames) {
        EXPECT_TRUE(f == frames[0]);
    }
}

TEST(RenderSequence, EditedFramesEqualPerFrameComposition) {
    synth::SceneConfig cfg;
    cfg.width = 180;
    cfg.height = 120;
    cfg.focal = 125.0;
    const synth::ScenePackage pkg = synth::build_package(6, cfg);
    const Trajectory &traj = pkg.scene.trajectory;
    const PointCloud cloud = threshold_cloud(pkg.pointmap);
    const std::vector<edit::EditTrack> edits{pkg.track};
    const auto frames = render_sequence(cloud, traj, edits);
    ASSERT_EQ(frames.size(), 16u);
    for (std::size_t t = 0; t < traj.size(); ++t) {
        const PointCloud moved = edit::apply_edits(cloud, edits, t, traj);
        EXPECT_TRUE(frames[t] == render_frame(moved, traj.poses[t], traj.intrinsics)) << t;
    }
}

TEST(FrameExport, PngAndDepthRoundTrip) {
    std::mt19937_64 rng(25);
    const RenderedFrame f = render_frame(random_cloud(800, rng), CameraPose::identity(), kSmall);
    const image::RgbImage rgb{f.width, f.height, f.rgb};
    EXPECT_EQ(image::decode_png(image::encode_png_rgb(rgb)), rgb);

    const image::RgbImage mask = image::decode_png(image::encode_png_mask(f.width, f.height, f.valid));
    for (std::size_t p = 0; p < f.pixel_count(); ++p) {
        const std::uint8_t expect = f.valid[p] ? 255 : 0;
        ASSERT_EQ(mask.pixels[p], (Rgb8{expect, expect, expect}));
    }

    const auto bytes = image::encode_depth(f.width, f.height, f.depth);
    EXPECT_EQ(bytes.size(), 8u + 4u * f.pixel_count());
    const image::DepthImage d = image::decode_depth(bytes);
    EXPECT_EQ(d.width, f.width);
    EXPECT_EQ(d.height, f.height);
    EXPECT_EQ(0, std::memcmp(d.depth.data(), f.depth.data(), 4 * f.pixel_count()));

    const std::vector<char> cut(bytes.begin(), bytes.end() - 1);
    EXPECT_GS_ERROR(image::decode_depth(cut), TruncatedFile);
    EXPECT_GS_ERROR(image::decode_png(cut), BadMagic);
}

} // namespace
} // namespace geoscaffold::render
