/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_TESTS_SUPPORT_HPP_
#define RM_TESTS_SUPPORT_HPP_

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include <rm/error.hpp>
#include <rm/util.hpp>

namespace rm::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        std::random_device rd;
        mPath = std::filesystem::temp_directory_path() / ("rm-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(mPath);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(mPath, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return mPath; }

private:
    std::filesystem::path mPath;
};

/// Polls `condition` every millisecond until it holds or `timeoutMs` passes.
inline bool eventually(const std::function<bool()>& condition, double timeoutMs = 5000)
{
    double deadline = steadyMs() + timeoutMs;
    while (steadyMs() < deadline) {
        if (condition()) {
            return true;
        }
        sleepMs(1);
    }
    return condition();
}

/// Error code thrown by `fn`, or nullopt if it returned normally.
template <typename Fn>
std::optional<ErrorCode> errorOf(Fn&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

} // namespace rm::test

#endif
