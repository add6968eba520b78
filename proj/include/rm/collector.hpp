/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_COLLECTOR_HPP_
#define RM_COLLECTOR_HPP_

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

#include <rm/provider_sim.hpp>
#include <rm/store.hpp>
#include <rm/tsdb.hpp>

namespace rm {

/**
 * Periodic monitoring actor. One collection round writes:
 *   region.latency, region.reachable        {region=<name>}
 *   resource.cost.perHour                    {resource=<id>}
 *   node.cpu.utilization, node.memory.usedGb {resource=<id>}  (scraped)
 *   latency                                  {deployment=<id>} for READY deployments
 */
class Collector {
public:
    /// Round-trip probe of a running deployment; nullopt when nothing could be probed.
    using DeploymentProbe = std::function<std::optional<double>(const Deployment&)>;

    Collector(Store& store, ProviderSimulator& simulator, Tsdb& tsdb, DeploymentProbe probe);
    ~Collector();

    Collector(const Collector&) = delete;
    Collector& operator=(const Collector&) = delete;

    /// One full collection round; returns the number of samples stored.
    std::size_t collectTick();

    /// Pull path: scrapes every registered resource and stores the samples.
    std::vector<MetricSample> scrapeAll();

    /// Probes one deployment now and stores its `latency` sample; returns the value.
    std::optional<double> refreshDeployment(const DeploymentId& id);

    /// Runs collectTick every `intervalMs` (real time) on a background thread.
    void start(double intervalMs);
    void stop();

private:
    std::optional<double> probeAndStore(const Deployment& deployment, TimestampMs now);

    Store& mStore;
    ProviderSimulator& mSimulator;
    Tsdb& mTsdb;
    DeploymentProbe mProbe;

    std::mutex mMutex;
    std::condition_variable mCond;
    bool mStopping {false};
    std::thread mThread;
};

} // namespace rm

#endif
