/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/alerting.hpp>

#include <cmath>
#include <limits>
#include <regex>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace rm {

namespace {

struct ParsedUrl {
    std::string origin;
    std::string path;
};

std::optional<ParsedUrl> splitUrl(const std::string& url)
{
    static const std::regex cUrl(R"(^(http://[A-Za-z0-9.\-]+(?::[0-9]{1,5})?)(/[^\s]*)?$)");
    std::smatch match;
    if (!std::regex_match(url, match, cUrl)) {
        return std::nullopt;
    }
    return ParsedUrl {match[1].str(), match[2].matched ? match[2].str() : "/"};
}

std::string episodeIdFor(const DeploymentId& id, int sloIndex, TimestampMs at, std::uint64_t counter)
{
    std::uint64_t h = stableHash(id + ":" + std::to_string(sloIndex) + ":" + std::to_string(at) + ":"
        + std::to_string(counter));
    static constexpr char cDigits[] = "0123456789abcdef";
    std::string out = "ep-";
    for (int shift = 44; shift >= 0; shift -= 4) {
        out += cDigits[(h >> shift) & 0xF];
    }
    return out;
}

} // namespace

std::string_view toString(SloStatus status)
{
    return status == SloStatus::Ok ? "OK" : "VIOLATED";
}

void to_json(nlohmann::json& j, const AlertRecord& r)
{
    j = nlohmann::json(r.alert);
    if (r.delivery) {
        j["delivered"] = r.delivery->delivered;
        j["attempts"] = r.delivery->attempts;
    }
}

AlertManager::AlertManager(Store& store, Tsdb& tsdb, EventBus& bus, Options options)
    : mStore(store)
    , mTsdb(tsdb)
    , mBus(bus)
    , mOptions(options)
    , mEvaluators(std::make_unique<ThreadPool>(std::max<std::size_t>(1, options.evaluationWorkers)))
    , mDelivery(std::make_unique<ThreadPool>(std::max<std::size_t>(1, options.deliveryWorkers)))
{
    if (!(mOptions.timeScale > 0)) {
        throw Error(ErrorCode::ConfigError, "timeScale must be positive", {{"field", "timeScale"}});
    }
}

AlertManager::~AlertManager()
{
    stop();
    drain();
    mEvaluators.reset();
    mDelivery.reset();
}

void AlertManager::setRefresher(Refresher refresher)
{
    mRefresher = std::move(refresher);
}

void AlertManager::setEngine(DeploymentEngine* engine)
{
    mEngine = engine;
}

double AlertManager::intervalFor(const Deployment& deployment) const
{
    std::int64_t interval = 0;
    for (const auto& slo : deployment.slos) {
        if (interval == 0 || slo.evaluationIntervalMs < interval) {
            interval = slo.evaluationIntervalMs;
        }
    }
    if (interval == 0) {
        interval = mOptions.evaluationIntervalMs;
    }
    return std::max(1.0, static_cast<double>(interval) * mOptions.timeScale);
}

std::vector<SloEvaluation> AlertManager::evaluationTick()
{
    std::vector<SloEvaluation> results;
    for (const auto& deployment : mStore.listDeploymentsWithAlerting()) {
        auto evaluated = evaluateDeployment(deployment);
        results.insert(results.end(), evaluated.begin(), evaluated.end());
    }
    return results;
}

std::vector<SloEvaluation> AlertManager::evaluateDeployment(const Deployment& deployment)
{
    if (mRefresher && deployment.status == DeploymentStatus::Ready) {
        try {
            mRefresher(deployment.id);
        } catch (const std::exception& e) {
            spdlog::debug("alerting: refresh of {} failed: {}", deployment.id, e.what());
        }
    }

    const TimestampMs now = nowMs();
    const auto window = static_cast<TimestampMs>(std::ceil(2.0 * intervalFor(deployment)));
    std::vector<SloEvaluation> results;

    for (std::size_t i = 0; i < deployment.slos.size(); ++i) {
        const auto& slo = deployment.slos[i];
        SloEvaluation evaluation;
        evaluation.deploymentId = deployment.id;
        evaluation.sloIndex = static_cast<int>(i);
        evaluation.evaluatedAtMs = now;
        try {
            TimestampMs newest = std::numeric_limits<TimestampMs>::min();
            for (const auto& series :
                mTsdb.query(slo.metric, {{"deployment", deployment.id}}, now - window, now, Aggregator::Last)) {
                if (series.value && series.timestampMs > newest) {
                    newest = series.timestampMs;
                    evaluation.observedValue = series.value;
                }
            }
        } catch (const Error& e) {
            spdlog::debug("alerting: query for {} failed: {}", deployment.id, e.what());
        }
        bool ok = evaluation.observedValue && satisfies(*evaluation.observedValue, slo.comparator, slo.threshold);
        evaluation.status = ok ? SloStatus::Ok : SloStatus::Violated;
        results.push_back(evaluation);
    }

    std::vector<AlertNotification> toSend;
    std::vector<int> toReallocate;
    {
        std::lock_guard lock(mMutex);
        for (const auto& evaluation : results) {
            Key key {evaluation.deploymentId, evaluation.sloIndex};
            auto open = mOpen.find(key);
            if (evaluation.status == SloStatus::Ok) {
                if (open != mOpen.end()) {
                    open->second.resolvedAtMs = std::max(now, open->second.startedAtMs);
                    mClosed.push_back(open->second);
                    if (mClosed.size() > mOptions.alertHistory) {
                        mClosed.pop_front();
                    }
                    mOpen.erase(open);
                }
                continue;
            }

            if (open == mOpen.end()) {
                ViolationEpisode episode;
                episode.episodeId = episodeIdFor(key.deploymentId, key.sloIndex, now, ++mEpisodeCounter);
                episode.deploymentId = key.deploymentId;
                episode.sloIndex = key.sloIndex;
                episode.startedAtMs = now;
                if (mOptions.benchMode) {
                    auto& pending = mInjections[key.deploymentId];
                    while (!pending.empty() && pending.front() <= now) {
                        mInjectionOfEpisode[episode.episodeId] = pending.front();
                        pending.pop_front();
                    }
                }
                open = mOpen.emplace(key, std::move(episode)).first;
            }

            const auto& slo = deployment.slos[evaluation.sloIndex];
            AlertNotification alert;
            alert.deploymentId = evaluation.deploymentId;
            alert.sloIndex = evaluation.sloIndex;
            alert.metric = slo.metric;
            alert.observedValue = evaluation.observedValue.value_or(std::numeric_limits<double>::quiet_NaN());
            alert.threshold = slo.threshold;
            alert.comparator = slo.comparator;
            alert.timestampMs = now;
            alert.episodeId = open->second.episodeId;

            mAlerts.push_back({alert, std::nullopt});
            if (mAlerts.size() > mOptions.alertHistory) {
                mAlerts.pop_front();
            }
            if (deployment.alerting.enabled && !deployment.alerting.webhookUrl.empty()) {
                toSend.push_back(alert);
            }
            if (mOptions.reallocationEnabled && mEngine && !open->second.reallocationAttempted
                && deployment.status == DeploymentStatus::Ready) {
                open->second.reallocationAttempted = true;
                toReallocate.push_back(evaluation.sloIndex);
            }
        }
    }

    for (const auto& alert : toSend) {
        postBackground([this, url = deployment.alerting.webhookUrl, alert] {
            auto result = notify(url, alert);
            recordDelivery(alert, result);
        });
    }
    for (int sloIndex : toReallocate) {
        postBackground([this, id = deployment.id, sloIndex] {
            try {
                auto moved = reallocate(id, sloIndex);
                spdlog::info("alerting: reallocated {} to {}", id, moved.resourceId);
            } catch (const Error& e) {
                spdlog::warn("alerting: reallocation of {} not possible: {}", id, e.what());
            }
        });
    }
    return results;
}

DeliveryResult AlertManager::notify(const std::string& webhookUrl, const AlertNotification& alert)
{
    DeliveryResult result;
    auto url = splitUrl(webhookUrl);
    if (!url) {
        result.error = "unsupported webhook URL";
        return result;
    }
    const std::string body = alert.toWireJson();

    for (int attempt = 0; attempt <= mOptions.maxRetries; ++attempt) {
        if (attempt > 0) {
            sleepMs(mOptions.retryBaseMs * std::pow(2.0, attempt - 1) * mOptions.timeScale);
        }
        ++result.attempts;
        httplib::Client client(url->origin);
        client.set_connection_timeout(2, 0);
        client.set_read_timeout(5, 0);
        client.set_keep_alive(false);
        auto response = client.Post(url->path, body, "application/json");
        if (!response) {
            result.lastStatus = 0;
            result.error = httplib::to_string(response.error());
            continue;
        }
        result.lastStatus = response->status;
        if (response->status >= 200 && response->status < 300) {
            result.delivered = true;
            result.error.clear();
            return result;
        }
        result.error = "HTTP " + std::to_string(response->status);
    }
    spdlog::warn("alerting: delivery of episode {} to {} failed after {} attempts: {}", alert.episodeId, webhookUrl,
        result.attempts, result.error);
    return result;
}

void AlertManager::recordDelivery(const AlertNotification& alert, const DeliveryResult& result)
{
    {
        std::lock_guard lock(mMutex);
        for (auto it = mAlerts.rbegin(); it != mAlerts.rend(); ++it) {
            if (it->alert.episodeId == alert.episodeId && it->alert.timestampMs == alert.timestampMs
                && it->alert.sloIndex == alert.sloIndex) {
                it->delivery = result;
                break;
            }
        }
        if (result.delivered) {
            if (auto open = mOpen.find({alert.deploymentId, alert.sloIndex}); open != mOpen.end()) {
                open->second.lastNotifiedAtMs = nowMs();
            }
        }
    }
    mBus.publish("alerting.delivery",
        {{"episodeId", alert.episodeId}, {"deploymentId", alert.deploymentId}, {"delivered", result.delivered},
            {"attempts", result.attempts}, {"status", result.lastStatus}});
}

Assignment AlertManager::reallocate(const DeploymentId& deploymentId, int sloIndex)
{
    if (!mEngine) {
        throw Error(ErrorCode::NoCandidate, "reallocation is not available");
    }
    Deployment deployment = mStore.getDeployment(deploymentId);
    if (sloIndex < 0 || static_cast<std::size_t>(sloIndex) >= deployment.slos.size()) {
        throw Error(ErrorCode::InvalidArgument, "no SLO " + std::to_string(sloIndex), {{"sloIndex", sloIndex}});
    }

    auto probes = mEngine->probeByResource(deployment);
    const Assignment* worst = nullptr;
    double worstRtt = -1.0;
    for (const auto& assignment : deployment.assignments) {
        auto it = probes.find(assignment.resourceId);
        double rtt = it == probes.end() ? std::numeric_limits<double>::infinity() : it->second;
        if (rtt > worstRtt) {
            worstRtt = rtt;
            worst = &assignment;
        }
    }
    if (!worst) {
        throw Error(ErrorCode::NoCandidate, "deployment has no assignments");
    }

    ResourceRecord current = mStore.getResource(worst->resourceId);
    std::optional<ResourceRecord> sameRegion;
    std::optional<ResourceRecord> otherRegion;
    for (const auto& resource : mStore.listResources()) {
        if (resource.state != ResourceState::Available || resource.platform != current.platform
            || resource.id == current.id) {
            continue;
        }
        if (resource.region != current.region) {
            if (!otherRegion) {
                otherRegion = resource;
            }
        } else if (!sameRegion) {
            sameRegion = resource;
        }
    }
    auto target = otherRegion ? otherRegion : sameRegion;
    if (!target) {
        throw Error(ErrorCode::NoCandidate, "no AVAILABLE " + std::string(toString(current.platform)) + " resource",
            {{"platform", toString(current.platform)}});
    }

    mEngine->reassign(deploymentId, current.id, target->id);
    return {target->id, worst->artifactRef};
}

void AlertManager::recordInjection(const DeploymentId& deploymentId, TimestampMs injectedAtMs)
{
    std::lock_guard lock(mMutex);
    mInjections[deploymentId].push_back(injectedAtMs);
}

double AlertManager::reactionTime(const std::string& episodeId) const
{
    std::lock_guard lock(mMutex);
    if (!mOptions.benchMode) {
        throw Error(ErrorCode::MissingGroundTruth, "reaction times need bench mode");
    }
    auto injected = mInjectionOfEpisode.find(episodeId);
    if (injected == mInjectionOfEpisode.end()) {
        throw Error(ErrorCode::MissingGroundTruth, "no injection recorded for episode " + episodeId,
            {{"episodeId", episodeId}});
    }
    for (const auto& [key, episode] : mOpen) {
        if (episode.episodeId == episodeId) {
            return static_cast<double>(episode.startedAtMs - injected->second);
        }
    }
    for (const auto& episode : mClosed) {
        if (episode.episodeId == episodeId) {
            return static_cast<double>(episode.startedAtMs - injected->second);
        }
    }
    throw Error(ErrorCode::NotFound, "unknown episode " + episodeId, {{"episodeId", episodeId}});
}

std::optional<ViolationEpisode> AlertManager::openEpisode(const DeploymentId& deploymentId, int sloIndex) const
{
    std::lock_guard lock(mMutex);
    auto it = mOpen.find({deploymentId, sloIndex});
    if (it == mOpen.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::vector<ViolationEpisode> AlertManager::episodes() const
{
    std::lock_guard lock(mMutex);
    std::vector<ViolationEpisode> all(mClosed.begin(), mClosed.end());
    for (const auto& [key, episode] : mOpen) {
        all.push_back(episode);
    }
    return all;
}

std::vector<AlertRecord> AlertManager::alerts(TimestampMs fromMs) const
{
    std::lock_guard lock(mMutex);
    std::vector<AlertRecord> result;
    for (const auto& record : mAlerts) {
        if (record.alert.timestampMs >= fromMs) {
            result.push_back(record);
        }
    }
    return result;
}

void AlertManager::postBackground(std::function<void()> task)
{
    {
        std::lock_guard lock(mBackgroundMutex);
        ++mBackgroundActive;
    }
    mDelivery->post([this, task = std::move(task)] {
        try {
            task();
        } catch (const std::exception& e) {
            spdlog::error("alerting: background task failed: {}", e.what());
        }
        std::lock_guard lock(mBackgroundMutex);
        if (--mBackgroundActive == 0) {
            mBackgroundCond.notify_all();
        }
    });
}

void AlertManager::drain()
{
    std::unique_lock lock(mBackgroundMutex);
    mBackgroundCond.wait(lock, [this] { return mBackgroundActive == 0; });
}

void AlertManager::start()
{
    std::lock_guard lock(mScheduleMutex);
    if (!mStopping) {
        return;
    }
    mStopping = false;
    mScheduler = std::thread([this] { schedulerLoop(); });
}

void AlertManager::stop()
{
    {
        std::lock_guard lock(mScheduleMutex);
        if (mStopping && !mScheduler.joinable()) {
            return;
        }
        mStopping = true;
    }
    mScheduleCond.notify_all();
    if (mScheduler.joinable()) {
        mScheduler.join();
    }
    // Evaluations already posted finish before the pool is reused.
    std::unique_lock lock(mScheduleMutex);
    mScheduleCond.wait(lock, [this] {
        for (const auto& [id, schedule] : mSchedule) {
            if (schedule.running) {
                return false;
            }
        }
        return true;
    });
    mSchedule.clear();
}

void AlertManager::schedulerLoop()
{
    const double discoveryMs = std::max(1.0, static_cast<double>(mOptions.evaluationIntervalMs) * mOptions.timeScale);
    std::unique_lock lock(mScheduleMutex);
    while (!mStopping) {
        lock.unlock();
        std::vector<Deployment> deployments;
        try {
            deployments = mStore.listDeploymentsWithAlerting();
        } catch (const std::exception& e) {
            spdlog::warn("alerting: cannot list deployments: {}", e.what());
        }
        lock.lock();

        const double now = steadyMs();
        std::set<DeploymentId> present;
        double wakeAt = now + discoveryMs;
        for (auto& deployment : deployments) {
            present.insert(deployment.id);
            const double interval = intervalFor(deployment);
            auto [it, inserted] = mSchedule.try_emplace(deployment.id);
            auto& schedule = it->second;
            if (inserted) {
                double phase = static_cast<double>(stableHash(deployment.id) % 1000) / 1000.0;
                schedule.nextDueMs = now + phase * interval;
            }
            if (schedule.nextDueMs <= now) {
                if (!schedule.running) {
                    schedule.running = true;
                    mEvaluators->post([this, deployment = std::move(deployment)] {
                        try {
                            evaluateDeployment(deployment);
                        } catch (const std::exception& e) {
                            spdlog::warn("alerting: evaluation of {} failed: {}", deployment.id, e.what());
                        }
                        std::lock_guard done(mScheduleMutex);
                        if (auto entry = mSchedule.find(deployment.id); entry != mSchedule.end()) {
                            entry->second.running = false;
                        }
                        mScheduleCond.notify_all();
                    });
                }
                while (schedule.nextDueMs <= now) {
                    schedule.nextDueMs += interval;
                }
            }
            wakeAt = std::min(wakeAt, schedule.nextDueMs);
        }
        for (auto it = mSchedule.begin(); it != mSchedule.end();) {
            if (!present.count(it->first) && !it->second.running) {
                it = mSchedule.erase(it);
            } else {
                ++it;
            }
        }

        auto deadline = std::chrono::steady_clock::time_point(
            std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                std::chrono::duration<double, std::milli>(wakeAt)));
        mScheduleCond.wait_until(lock, deadline, [this] { return mStopping; });
    }
}

} // namespace rm
