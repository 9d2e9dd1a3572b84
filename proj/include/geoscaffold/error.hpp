// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace geoscaffold {

enum class ErrorCode {
    BadMagic,
    TruncatedFile,
    DimensionMismatch,
    NonFiniteValue,
    IoFailure,
    DegenerateInput,
    BadWaypointOrder,
    EmptySegment,
    OverlappingSegments,
    BadDimensions,
    ShapeMismatch,
    NonFiniteLoss,
    LengthMismatch,
    TooSmall,
    SchemaViolation,
    InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::BadWaypointOrder: return "BadWaypointOrder";
    case ErrorCode::EmptySegment: return "EmptySegment";
    case ErrorCode::OverlappingSegments: return "OverlappingSegments";
    case ErrorCode::BadDimensions: return "BadDimensions";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Library-wide exception. `code()` is stable and machine readable; `what()` is for humans.
/// `path()` carries a JSON field path (e.g. "frames[2].R") for schema violations.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string &message, std::string path = {})
        : std::runtime_error(std::string(to_string(code)) + ": " + message), mCode(code),
          mPath(std::move(path)) {}

    ErrorCode code() const noexcept { return mCode; }
    const std::string &path() const noexcept { return mPath; }

  private:
    ErrorCode mCode;
    std::string mPath;
};

} // namespace geoscaffold
