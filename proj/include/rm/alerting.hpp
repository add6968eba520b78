/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_ALERTING_HPP_
#define RM_ALERTING_HPP_

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <rm/engine.hpp>
#include <rm/event_bus.hpp>
#include <rm/store.hpp>
#include <rm/tsdb.hpp>

namespace rm {

enum class SloStatus { Ok, Violated };

std::string_view toString(SloStatus status);

struct SloEvaluation {
    DeploymentId deploymentId;
    int sloIndex {0};
    SloStatus status {SloStatus::Ok};
    /// nullopt when no sample was found inside the staleness window.
    std::optional<double> observedValue;
    TimestampMs evaluatedAtMs {0};
};

struct ViolationEpisode {
    std::string episodeId;
    DeploymentId deploymentId;
    int sloIndex {0};
    TimestampMs startedAtMs {0};
    std::optional<TimestampMs> lastNotifiedAtMs;
    std::optional<TimestampMs> resolvedAtMs;
    bool reallocationAttempted {false};
};

struct DeliveryResult {
    bool delivered {false};
    int attempts {0};
    /// HTTP status of the last attempt, 0 when no response arrived.
    int lastStatus {0};
    std::string error;
};

/// Stored alert, as served by the alert feed.
struct AlertRecord {
    AlertNotification alert;
    std::optional<DeliveryResult> delivery;
};

void to_json(nlohmann::json& j, const AlertRecord& r);

/**
 * Periodically evaluates the SLOs of alerting-enabled deployments, keeps one
 * violation episode per (deployment, SLO), posts webhook notifications and,
 * when enabled, moves a violating assignment to a spare resource.
 */
class AlertManager {
public:
    /// Fresh measurement of a deployment's metrics just before it is evaluated.
    using Refresher = std::function<void(const DeploymentId&)>;

    struct Options {
        double timeScale {1.0};
        /// Unscaled; used when a deployment has no SLO of its own interval.
        std::int64_t evaluationIntervalMs {cDefaultEvaluationIntervalMs};
        bool reallocationEnabled {false};
        int maxRetries {3};
        /// Unscaled delay before the first retry; doubles for each further retry.
        double retryBaseMs {1000.0};
        std::size_t deliveryWorkers {8};
        std::size_t evaluationWorkers {4};
        std::size_t alertHistory {10'000};
        /// Keeps injection ground truth so reaction times can be computed.
        bool benchMode {false};
    };

    AlertManager(Store& store, Tsdb& tsdb, EventBus& bus, Options options);
    ~AlertManager();

    AlertManager(const AlertManager&) = delete;
    AlertManager& operator=(const AlertManager&) = delete;

    void setRefresher(Refresher refresher);
    /// Engine used for reallocation; without it reallocation never happens.
    void setEngine(DeploymentEngine* engine);

    /// Evaluates every alerting-enabled deployment once.
    std::vector<SloEvaluation> evaluationTick();

    /// Evaluates one deployment now (refresh, query, episodes, notifications).
    std::vector<SloEvaluation> evaluateDeployment(const Deployment& deployment);

    /// Synchronous delivery with retries.
    DeliveryResult notify(const std::string& webhookUrl, const AlertNotification& alert);

    Assignment reallocate(const DeploymentId& deploymentId, int sloIndex);

    void recordInjection(const DeploymentId& deploymentId, TimestampMs injectedAtMs);
    /// detectedAtMs - injectedAtMs for an episode; MissingGroundTruth outside bench mode.
    double reactionTime(const std::string& episodeId) const;

    std::optional<ViolationEpisode> openEpisode(const DeploymentId& deploymentId, int sloIndex) const;
    std::vector<ViolationEpisode> episodes() const;
    std::vector<AlertRecord> alerts(TimestampMs fromMs) const;

    /// Real-time evaluation period of a deployment in milliseconds.
    double intervalFor(const Deployment& deployment) const;

    /// Starts the fixed-rate, phase-staggered scheduler.
    void start();
    void stop();

    /// Waits for queued deliveries and reallocations to finish.
    void drain();

private:
    struct Key {
        DeploymentId deploymentId;
        int sloIndex;
        auto operator<=>(const Key&) const = default;
    };

    struct Schedule {
        double nextDueMs {0};
        bool running {false};
    };

    void schedulerLoop();
    void postBackground(std::function<void()> task);
    void recordDelivery(const AlertNotification& alert, const DeliveryResult& result);

    Store& mStore;
    Tsdb& mTsdb;
    EventBus& mBus;
    Options mOptions;
    Refresher mRefresher;
    DeploymentEngine* mEngine {nullptr};

    mutable std::mutex mMutex;
    std::map<Key, ViolationEpisode> mOpen;
    std::deque<ViolationEpisode> mClosed;
    std::deque<AlertRecord> mAlerts;
    std::map<DeploymentId, std::deque<TimestampMs>> mInjections;
    std::map<std::string, TimestampMs> mInjectionOfEpisode;
    std::uint64_t mEpisodeCounter {0};

    std::mutex mScheduleMutex;
    std::condition_variable mScheduleCond;
    std::map<DeploymentId, Schedule> mSchedule;
    bool mStopping {true};
    std::thread mScheduler;

    std::mutex mBackgroundMutex;
    std::condition_variable mBackgroundCond;
    std::size_t mBackgroundActive {0};

    std::unique_ptr<ThreadPool> mEvaluators;
    std::unique_ptr<ThreadPool> mDelivery;
};

} // namespace rm

#endif
