// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/error.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <string>

namespace geoscaffold::testing {

/// Deletes itself on scope exit.
class TempDir {
  public:
    explicit TempDir(const std::string &tag = "gs") {
        std::random_device rd;
        mPath = std::filesystem::temp_directory_path() /
                (tag + "_" + std::to_string(rd()) + "_" + std::to_string(rd()));
        std::filesystem::create_directories(mPath);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(mPath, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;

    const std::filesystem::path &path() const { return mPath; }
    std::filesystem::path operator/(const std::string &name) const { return mPath / name; }

  private:
    std::filesystem::path mPath;
};

} // namespace geoscaffold::testing

#define EXPECT_GS_ERROR(stmt, expected_code)                                                    \
    do {                                                                                        \
        try {                                                                                   \
            stmt;                                                                               \
            ADD_FAILURE() << "expected geoscaffold::Error " #expected_code;                     \
        } catch (const ::geoscaffold::Error &e) {                                               \
            EXPECT_EQ(e.code(), ::geoscaffold::ErrorCode::expected_code) << e.what();           \
        }                                                                                       \
    } while (0)
