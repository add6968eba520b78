/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/collector.hpp>

#include <spdlog/spdlog.h>

namespace rm {

Collector::Collector(Store& store, ProviderSimulator& simulator, Tsdb& tsdb, DeploymentProbe probe)
    : mStore(store)
    , mSimulator(simulator)
    , mTsdb(tsdb)
    , mProbe(std::move(probe))
{
}

Collector::~Collector()
{
    stop();
}

std::size_t Collector::collectTick()
{
    TimestampMs now = nowMs();
    std::vector<MetricSample> samples;

    for (const auto& region : mSimulator.regions()) {
        auto probe = mSimulator.probe(region.name);
        if (probe.reachable) {
            samples.push_back({"region.latency", now, probe.latencyMs, {{"region", region.name}}});
        }
        samples.push_back({"region.reachable", now, probe.reachable ? 1.0 : 0.0, {{"region", region.name}}});
    }

    for (const auto& resource : mStore.listResources()) {
        samples.push_back({"resource.cost.perHour", now, resource.costPerHour, {{"resource", resource.id}}});
        try {
            auto scraped = parseExposition(mSimulator.scrapeText(resource), now);
            samples.insert(samples.end(), scraped.begin(), scraped.end());
        } catch (const Error& e) {
            if (e.code() != ErrorCode::ProviderUnreachable) {
                spdlog::warn("collector: scrape of {} failed: {}", resource.id, e.what());
            }
        }
    }

    std::size_t stored = mTsdb.pushSamples(samples);

    for (const auto& deployment : mStore.listDeployments()) {
        if (deployment.status == DeploymentStatus::Ready && probeAndStore(deployment, now)) {
            ++stored;
        }
    }
    return stored;
}

std::vector<MetricSample> Collector::scrapeAll()
{
    TimestampMs now = nowMs();
    std::vector<MetricSample> samples;
    for (const auto& resource : mStore.listResources()) {
        try {
            auto scraped = parseExposition(mSimulator.scrapeText(resource), now);
            samples.insert(samples.end(), scraped.begin(), scraped.end());
        } catch (const Error& e) {
            spdlog::debug("collector: scrape of {} skipped: {}", resource.id, e.what());
        }
    }
    mTsdb.pushSamples(samples);
    return samples;
}

std::optional<double> Collector::refreshDeployment(const DeploymentId& id)
{
    auto deployment = mStore.findDeployment(id);
    if (!deployment || deployment->status != DeploymentStatus::Ready) {
        return std::nullopt;
    }
    return probeAndStore(*deployment, nowMs());
}

std::optional<double> Collector::probeAndStore(const Deployment& deployment, TimestampMs now)
{
    std::optional<double> latency;
    try {
        latency = mProbe(deployment);
    } catch (const Error& e) {
        spdlog::debug("collector: probe of {} failed: {}", deployment.id, e.what());
    }
    if (latency) {
        mTsdb.put({"latency", now, *latency, {{"deployment", deployment.id}}});
    }
    return latency;
}

void Collector::start(double intervalMs)
{
    stop();
    {
        std::lock_guard lock(mMutex);
        mStopping = false;
    }
    mThread = std::thread([this, intervalMs] {
        auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double, std::milli>(intervalMs));
        auto next = std::chrono::steady_clock::now();
        std::unique_lock lock(mMutex);
        while (!mStopping) {
            lock.unlock();
            try {
                collectTick();
            } catch (const std::exception& e) {
                spdlog::warn("collector tick failed: {}", e.what());
            }
            lock.lock();
            next += period;
            mCond.wait_until(lock, next, [this] { return mStopping; });
        }
    });
}

void Collector::stop()
{
    {
        std::lock_guard lock(mMutex);
        mStopping = true;
    }
    mCond.notify_all();
    if (mThread.joinable()) {
        mThread.join();
    }
}

} // namespace rm
