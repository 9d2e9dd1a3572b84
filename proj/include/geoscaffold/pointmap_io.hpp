// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/error.hpp>

#include <Eigen/Core>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geoscaffold {

static_assert(std::endian::native == std::endian::little,
              "GPM1 and depth containers are read and written with host byte order");

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb8 &, const Rgb8 &) = default;
};

struct PixelCoord {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    friend bool operator==(const PixelCoord &, const PixelCoord &) = default;
};

/// Dense per-pixel reconstruction of one reference frame: world positions, reliability and color.
/// Grids are row-major with `width` columns and `height` rows.
struct PointMap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::array<float, 3>> positions;
    std::vector<float> confidence;
    std::vector<Rgb8> rgb;
    /// 1 = static pixel. Absent means every pixel is treated as static.
    std::optional<std::vector<std::uint8_t>> static_mask;

    std::size_t pixel_count() const noexcept { return std::size_t(width) * height; }
    std::size_t index(std::uint32_t row, std::uint32_t col) const noexcept {
        return std::size_t(row) * width + col;
    }
    bool is_static(std::size_t idx) const noexcept {
        return !static_mask || (*static_mask)[idx] != 0;
    }

    static PointMap zeros(std::uint32_t width, std::uint32_t height) {
        PointMap pm;
        pm.width = width;
        pm.height = height;
        pm.positions.assign(pm.pixel_count(), {0.f, 0.f, 0.f});
        pm.confidence.assign(pm.pixel_count(), 0.f);
        pm.rgb.assign(pm.pixel_count(), Rgb8{});
        return pm;
    }

    friend bool operator==(const PointMap &, const PointMap &) = default;
};

struct CloudPoint {
    Eigen::Vector3d position;
    Rgb8 color;
    PixelCoord source_pixel;
};

/// Confidence-filtered colored points; order follows the source pixel scan order.
struct PointCloud {
    std::vector<CloudPoint> points;

    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }
};

namespace gpm {

inline constexpr std::array<char, 4> kMagic = {'G', 'P', 'M', '1'};
inline constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 1;
inline constexpr std::uint8_t kFlagStaticMask = 0x1;

inline std::size_t file_size(std::uint32_t width, std::uint32_t height, bool with_mask) {
    const std::size_t n = std::size_t(width) * height;
    return kHeaderBytes + n * (12 + 4 + 3) + (with_mask ? n : 0);
}

} // namespace gpm

/// Throws on any invariant violation of `pm`.
inline void validate(const PointMap &pm) {
    const std::size_t n = pm.pixel_count();
    if (pm.width == 0 || pm.height == 0) {
        throw Error(ErrorCode::DimensionMismatch, "point map must have non-zero width and height");
    }
    if (pm.positions.size() != n || pm.confidence.size() != n || pm.rgb.size() != n ||
        (pm.static_mask && pm.static_mask->size() != n)) {
        throw Error(ErrorCode::DimensionMismatch, "grid sizes do not match width*height");
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto &p = pm.positions[i];
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
            throw Error(ErrorCode::NonFiniteValue,
                        "non-finite position at pixel " + std::to_string(i));
        }
        const float c = pm.confidence[i];
        if (!(c >= 0.f && c <= 1.f)) {
            throw Error(ErrorCode::NonFiniteValue,
                        "confidence outside [0,1] at pixel " + std::to_string(i));
        }
    }
    if (pm.static_mask) {
        for (std::size_t i = 0; i < n; ++i) {
            if ((*pm.static_mask)[i] > 1) {
                throw Error(ErrorCode::NonFiniteValue,
                            "static mask value not 0/1 at pixel " + std::to_string(i));
            }
        }
    }
}

namespace detail {

template <typename T> void append_raw(std::vector<char> &out, const T *data, std::size_t count) {
    const auto *bytes = reinterpret_cast<const char *>(data);
    out.insert(out.end(), bytes, bytes + sizeof(T) * count);
}

inline void write_file(const std::filesystem::path &path, std::span<const char> bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
    }
    os.write(bytes.data(), std::streamsize(bytes.size()));
    if (!os) {
        throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
    }
}

inline std::vector<char> read_file(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error(ErrorCode::IoFailure, "cannot open for reading: " + path.string());
    }
    return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

} // namespace detail

inline std::vector<char> encode_pointmap(const PointMap &pm) {
    validate(pm);
    std::vector<char> out;
    out.reserve(gpm::file_size(pm.width, pm.height, pm.static_mask.has_value()));
    out.insert(out.end(), gpm::kMagic.begin(), gpm::kMagic.end());
    detail::append_raw(out, &pm.width, 1);
    detail::append_raw(out, &pm.height, 1);
    const std::uint8_t flags = pm.static_mask ? gpm::kFlagStaticMask : 0;
    detail::append_raw(out, &flags, 1);
    detail::append_raw(out, pm.positions.data()->data(), pm.positions.size() * 3);
    detail::append_raw(out, pm.confidence.data(), pm.confidence.size());
    for (const Rgb8 &c : pm.rgb) {
        const std::uint8_t px[3] = {c.r, c.g, c.b};
        detail::append_raw(out, px, 3);
    }
    if (pm.static_mask) {
        detail::append_raw(out, pm.static_mask->data(), pm.static_mask->size());
    }
    return out;
}

inline PointMap decode_pointmap(std::span<const char> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), gpm::kMagic.data(), 4) != 0) {
        throw Error(ErrorCode::BadMagic, "missing GPM1 magic");
    }
    if (bytes.size() < gpm::kHeaderBytes) {
        throw Error(ErrorCode::TruncatedFile, "header truncated");
    }
    PointMap pm;
    std::memcpy(&pm.width, bytes.data() + 4, 4);
    std::memcpy(&pm.height, bytes.data() + 8, 4);
    const auto flags = static_cast<std::uint8_t>(bytes[12]);
    if ((flags & ~gpm::kFlagStaticMask) != 0) {
        throw Error(ErrorCode::DimensionMismatch, "unknown flag bits in header");
    }
    if (pm.width == 0 || pm.height == 0) {
        throw Error(ErrorCode::DimensionMismatch, "zero width or height");
    }
    const bool with_mask = (flags & gpm::kFlagStaticMask) != 0;
    const std::size_t expected = gpm::file_size(pm.width, pm.height, with_mask);
    if (bytes.size() < expected) {
        throw Error(ErrorCode::TruncatedFile, "expected " + std::to_string(expected) +
                                                  " bytes, found " + std::to_string(bytes.size()));
    }
    if (bytes.size() > expected) {
        throw Error(ErrorCode::DimensionMismatch, "trailing bytes after declared grids");
    }

    const std::size_t n = pm.pixel_count();
    const char *cursor = bytes.data() + gpm::kHeaderBytes;
    pm.positions.resize(n);
    std::memcpy(pm.positions.data(), cursor, n * 12);
    cursor += n * 12;
    pm.confidence.resize(n);
    std::memcpy(pm.confidence.data(), cursor, n * 4);
    cursor += n * 4;
    pm.rgb.resize(n);
    for (std::size_t i = 0; i < n; ++i, cursor += 3) {
        pm.rgb[i] = Rgb8{std::uint8_t(cursor[0]), std::uint8_t(cursor[1]), std::uint8_t(cursor[2])};
    }
    if (with_mask) {
        pm.static_mask.emplace(n);
        std::memcpy(pm.static_mask->data(), cursor, n);
    }
    validate(pm);
    return pm;
}

inline void save_pointmap(const PointMap &pm, const std::filesystem::path &path) {
    const auto bytes = encode_pointmap(pm);
    detail::write_file(path, bytes);
}

inline PointMap load_pointmap(const std::filesystem::path &path) {
    const auto bytes = detail::read_file(path);
    return decode_pointmap(bytes);
}

inline constexpr double kDefaultConfidenceThreshold = 0.65;

/// Keeps exactly the pixels with confidence strictly greater than `tau`.
inline PointCloud threshold_cloud(const PointMap &pm, double tau = kDefaultConfidenceThreshold) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "tau must lie in [0,1]");
    }
    // Compared in the storage precision so a stored value equal to tau is excluded.
    const float threshold = static_cast<float>(tau);
    PointCloud cloud;
    for (std::uint32_t row = 0; row < pm.height; ++row) {
        for (std::uint32_t col = 0; col < pm.width; ++col) {
            const std::size_t i = pm.index(row, col);
            if (pm.confidence[i] > threshold) {
                const auto &p = pm.positions[i];
                cloud.points.push_back(
                    {Eigen::Vector3d(p[0], p[1], p[2]), pm.rgb[i], PixelCoord{row, col}});
            }
        }
    }
    return cloud;
}

} // namespace geoscaffold
