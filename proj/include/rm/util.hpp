/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_UTIL_HPP_
#define RM_UTIL_HPP_

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <string_view>
#include <thread>
#include <vector>

namespace rm {

using TimestampMs = std::int64_t;

/// Wall-clock milliseconds since the unix epoch.
inline TimestampMs nowMs()
{
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

/// Monotonic time in fractional milliseconds, for measuring durations.
inline double steadyMs()
{
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

inline void sleepMs(double ms)
{
    if (ms > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
    }
}

/// 64-bit FNV-1a, used wherever a stable hash of a string is needed (tick phases, seeds).
inline std::uint64_t stableHash(std::string_view text)
{
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

/**
 * Fixed-size worker pool. Tasks run in submission order across workers;
 * the destructor drains the queue before joining.
 */
class ThreadPool {
public:
    explicit ThreadPool(std::size_t workers);
    ~ThreadPool();

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    void post(std::function<void()> task);
    std::size_t size() const noexcept { return mWorkers.size(); }

private:
    void run();

    std::mutex mMutex;
    std::condition_variable mCond;
    std::deque<std::function<void()>> mTasks;
    bool mStopping {false};
    std::vector<std::thread> mWorkers;
};

} // namespace rm

#endif
