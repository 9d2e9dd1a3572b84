// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include <geoscaffold/metrics.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace geoscaffold::metrics {
namespace {

TrajectorySample random_path(std::size_t n, std::mt19937_64 &rng) {
    std::normal_distribution<double> d(0.0, 2.0);
    TrajectorySample s;
    for (std::size_t i = 0; i < n; ++i) {
        s.positions.emplace_back(d(rng), d(rng), d(rng));
    }
    return s;
}

TrajectorySample offset(TrajectorySample s, const Vec3 &d) {
    for (auto &p : s.positions) {
        p += d;
    }
    return s;
}

Image random_image(std::uint32_t w, std::uint32_t h, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img = Image::filled(w, h, 3, 0.0);
    for (double &v : img.data) {
        v = u(rng);
    }
    return img;
}

TEST(Ade, ClosedForms) {
    std::mt19937_64 rng(51);
    const TrajectorySample y = random_path(10, rng);
    EXPECT_EQ(ade(y, y), 0.0);
    EXPECT_NEAR(ade(y, offset(y, Vec3(0.03, 0, 0))), 0.03, 1e-12);

    TrajectorySample drift = y;
    for (std::size_t i = 0; i < 10; ++i) {
        drift.positions[i] += double(i + 1) / 10.0 * Vec3(0, 0, 0.1);
    }
    EXPECT_NEAR(ade(y, drift), 0.055, 1e-12);
    EXPECT_NEAR(fde(y, drift), 0.1, 1e-12);
}

TEST(Fde, ThreeFourFive) {
    std::mt19937_64 rng(52);
    const TrajectorySample y = random_path(6, rng);
    EXPECT_EQ(fde(y, y), 0.0);
    TrajectorySample p = y;
    p.positions.back() += Vec3(0, 0.04, 0.03);
    EXPECT_NEAR(fde(y, p), 0.05, 1e-12);
}

TEST(Ade, LengthMismatchAndEmpty) {
    std::mt19937_64 rng(53);
    const TrajectorySample a = random_path(4, rng), b = random_path(5, rng);
    EXPECT_GS_ERROR(ade(a, b), LengthMismatch);
    EXPECT_GS_ERROR(fde(a, b), LengthMismatch);
    EXPECT_GS_ERROR(ade(TrajectorySample{}, TrajectorySample{}), LengthMismatch);
}

TEST(Ade, SymmetryTranslationInvarianceAndSingleStep) {
    std::mt19937_64 rng(54);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + trial % 9;
        const TrajectorySample a = random_path(n, rng), b = random_path(n, rng);
        const Vec3 shift(3.0 * trial, -1.0, 0.5);
        EXPECT_DOUBLE_EQ(ade(a, b), ade(b, a));
        EXPECT_DOUBLE_EQ(fde(a, b), fde(b, a));
        EXPECT_NEAR(ade(offset(a, shift), offset(b, shift)), ade(a, b), 1e-9);
        EXPECT_NEAR(fde(offset(a, shift), offset(b, shift)), fde(a, b), 1e-9);
        EXPECT_GE(ade(a, b), 0.0);
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            worst = std::max(worst, (a.positions[i] - b.positions[i]).norm());
        }
        EXPECT_LE(ade(a, b), worst + 1e-12);
        if (n == 1) {
            EXPECT_DOUBLE_EQ(ade(a, b), fde(a, b));
        }
    }
}

TEST(CameraCenters, UseNegatedRotatedTranslation) {
    const geometry::CameraPose pose{geometry::rotation_y(0.5), Vec3(1, 2, 3)};
    const auto s = camera_centers(geometry::Trajectory{{pose}, {}});
    EXPECT_LT((s.positions[0] - (-(pose.R.transpose() * pose.T))).norm(), 1e-15);
}

TEST(Psnr, IdenticalIsInfinite) {
    std::mt19937_64 rng(55);
    const Image a = random_image(16, 16, rng);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_GT(psnr(a, a), 0.0);
}

TEST(Psnr, ConstantDifferenceClosedForm) {
    const Image a = Image::filled(32, 24, 3, 100.0 / 255.0);
    const Image b = Image::filled(32, 24, 3, 116.0 / 255.0);
    EXPECT_NEAR(psnr(a, b), 20.0 * std::log10(255.0 / 16.0), 1e-9);
    EXPECT_NEAR(psnr(a, b), 24.05, 0.01);
}

TEST(Psnr, MatchesDirectMse) {
    std::mt19937_64 rng(56);
    const Image a = random_image(40, 30, rng), b = random_image(40, 30, rng);
    double mse = 0.0;
    for (std::uint32_t y = 0; y < 30; ++y) {
        for (std::uint32_t x = 0; x < 40; ++x) {
            for (std::uint32_t c = 0; c < 3; ++c) {
                mse += std::pow(a.at(y, x, c) - b.at(y, x, c), 2);
            }
        }
    }
    mse /= 40.0 * 30.0 * 3.0;
    EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(1.0 / mse), 1e-9);
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
    std::mt19937_64 rng(57);
    const Image base = Image::filled(48, 48, 3, 0.5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> pattern(base.data.size());
    for (double &v : pattern) {
        v = u(rng);
    }
    double previous = std::numeric_limits<double>::infinity();
    for (double amp : {0.01, 0.03, 0.08, 0.15, 0.3}) {
        Image noisy = base;
        for (std::size_t i = 0; i < noisy.data.size(); ++i) {
            noisy.data[i] += amp * pattern[i];
        }
        const double value = psnr(base, noisy);
        EXPECT_LT(value, previous) << amp;
        previous = value;
    }
}

TEST(Psnr, ShapeMismatch) {
    EXPECT_GS_ERROR(psnr(Image::filled(4, 4, 3, 0), Image::filled(4, 5, 3, 0)), DimensionMismatch);
}

TEST(Ssim, IdenticalIsOne) {
    std::mt19937_64 rng(58);
    for (int trial = 0; trial < 5; ++trial) {
        const Image a = random_image(24 + trial, 20, rng);
        EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
    }
}

TEST(Ssim, ConstantImagesClosedForm) {
    const double c1 = 0.01 * 0.01;
    const double expected = (2 * 0.2 * 0.8 + c1) / (0.2 * 0.2 + 0.8 * 0.8 + c1);
    EXPECT_NEAR(ssim(Image::filled(20, 16, 3, 0.2), Image::filled(20, 16, 3, 0.8)), expected, 1e-9);
}

/// Direct windowed evaluation with the 2D Gaussian written out per pixel.
double reference_ssim(const Image &a, const Image &b) {
    const int win = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    double w2[11][11];
    double total_w = 0.0;
    for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
            const double di = i - 5.0, dj = j - 5.0;
            w2[i][j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
            total_w += w2[i][j];
        }
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::uint32_t c = 0; c < a.channels; ++c) {
        for (std::uint32_t y = 0; y + win <= a.height; ++y) {
            for (std::uint32_t x = 0; x + win <= a.width; ++x) {
                double mx = 0, my = 0;
                for (int i = 0; i < win; ++i) {
                    for (int j = 0; j < win; ++j) {
                        const double w = w2[i][j] / total_w;
                        mx += w * a.at(y + i, x + j, c);
                        my += w * b.at(y + i, x + j, c);
                    }
                }
                double vx = 0, vy = 0, cov = 0;
                for (int i = 0; i < win; ++i) {
                    for (int j = 0; j < win; ++j) {
                        const double w = w2[i][j] / total_w;
                        const double dx = a.at(y + i, x + j, c) - mx;
                        const double dy = b.at(y + i, x + j, c) - my;
                        vx += w * dx * dx;
                        vy += w * dy * dy;
                        cov += w * dx * dy;
                    }
                }
                sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        }
    }
    return sum / double(count);
}

TEST(Ssim, MatchesScalarReference) {
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 3; ++trial) {
        const Image a = random_image(30 + 3 * trial, 22, rng);
        Image b = a;
        std::normal_distribution<double> n(0.0, 0.1 * (trial + 1));
        for (double &v : b.data) {
            v = std::clamp(v + n(rng), 0.0, 1.0);
        }
        EXPECT_NEAR(ssim(a, b), reference_ssim(a, b), 1e-6);
        EXPECT_LE(ssim(a, b), 1.0);
    }
}

TEST(Ssim, RejectsSmallOrMismatchedImages) {
    EXPECT_GS_ERROR(ssim(Image::filled(10, 20, 3, 0), Image::filled(10, 20, 3, 0)), TooSmall);
    EXPECT_GS_ERROR(ssim(Image::filled(12, 20, 3, 0), Image::filled(20, 12, 3, 0)), DimensionMismatch);
}

TEST(FromRgb8, ScalesByTwoFiftyFive) {
    const image::RgbImage img{2, 1, {Rgb8{0, 51, 255}, Rgb8{255, 255, 255}}};
    const Image f = from_rgb8(img);
    EXPECT_DOUBLE_EQ(f.at(0, 0, 1), 0.2);
    EXPECT_DOUBLE_EQ(f.at(0, 0, 2), 1.0);
    EXPECT_DOUBLE_EQ(f.at(0, 1, 0), 1.0);
}

} // namespace
} // namespace geoscaffold::metrics
