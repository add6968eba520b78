/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/util.hpp>

#include <spdlog/spdlog.h>

namespace rm {

ThreadPool::ThreadPool(std::size_t workers)
{
    if (workers == 0) {
        workers = 1;
    }
    mWorkers.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) {
        mWorkers.emplace_back([this] { run(); });
    }
}

ThreadPool::~ThreadPool()
{
    {
        std::lock_guard lock(mMutex);
        mStopping = true;
    }
    mCond.notify_all();
    for (auto& worker : mWorkers) {
        worker.join();
    }
}

void ThreadPool::post(std::function<void()> task)
{
    {
        std::lock_guard lock(mMutex);
        mTasks.push_back(std::move(task));
    }
    mCond.notify_one();
}

void ThreadPool::run()
{
    for (;;) {
        std::function<void()> task;
        {
            std::unique_lock lock(mMutex);
            mCond.wait(lock, [this] { return mStopping || !mTasks.empty(); });
            if (mTasks.empty()) {
                return;
            }
            task = std::move(mTasks.front());
            mTasks.pop_front();
        }
        try {
            task();
        } catch (const std::exception& e) {
            spdlog::error("thread pool task failed: {}", e.what());
        }
    }
}

} // namespace rm
