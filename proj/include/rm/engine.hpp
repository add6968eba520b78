/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_ENGINE_HPP_
#define RM_ENGINE_HPP_

#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include <rm/event_bus.hpp>
#include <rm/provider_sim.hpp>
#include <rm/store.hpp>

namespace rm {

struct DeploymentRequest {
    std::string ownerId;
    std::vector<Assignment> assignments;
    /// SLO texts as submitted; parsed during validation.
    std::vector<std::string> slos;
    AlertingConfig alerting;
    /// One credential string per platform.
    std::map<Platform, std::string> credentials;

    /// Accepts {assignments:[{resourceId, artifact}], slos:[text], alerting:{enabled, webhookUrl},
    /// credentials:{PLATFORM: string}}. Throws ValidationFailed on a malformed document.
    static DeploymentRequest fromJson(const nlohmann::json& body, const std::string& ownerId);
};

struct ValidationResult {
    std::vector<std::string> reasons;

    bool ok() const noexcept { return reasons.empty(); }
};

/// One provisioning step: a resource and what gets placed on it.
struct PlanStep {
    ResourceId resourceId;
    Platform platform {Platform::FaasEdge};
    std::string artifactRef;
    /// Steps on distinct resources may run concurrently.
    bool parallelizable {true};
};

struct DeploymentPlan {
    DeploymentId deploymentId;
    std::vector<PlanStep> steps;
    TimestampMs createdAtMs {0};
};

/// Minimal check of an http(s)://host[:port][/path] URL.
bool isWellFormedUrl(const std::string& url);

/**
 * Drives the deployment lifecycle. Commands validate and commit synchronously
 * and return; provider work (pre-pull, deploy, terminate, startup, shutdown)
 * continues on background workers and lands in the store as lifecycle events.
 * Every transition is published on `deployment.status`.
 */
class DeploymentEngine {
public:
    struct Options {
        std::int64_t evaluationIntervalMs {cDefaultEvaluationIntervalMs};
        std::size_t backgroundWorkers {32};
    };

    DeploymentEngine(Store& store, EventBus& bus, ProviderSimulator& simulator, Testbed catalog);
    DeploymentEngine(Store& store, EventBus& bus, ProviderSimulator& simulator, Testbed catalog, Options options);
    ~DeploymentEngine();

    DeploymentEngine(const DeploymentEngine&) = delete;
    DeploymentEngine& operator=(const DeploymentEngine&) = delete;

    /// Pure check; reasons are returned as data.
    ValidationResult validate(const DeploymentRequest& request) const;

    DeploymentPlan plan(const Deployment& deployment) const;

    /// Validates, reserves and returns the new id while provisioning continues.
    /// Throws ValidationFailed or ResourceConflict.
    DeploymentId createDeployment(const DeploymentRequest& request);

    /// Accepts READY, STOPPED or ERROR deployments; providers terminate in the background.
    void terminateDeployment(const DeploymentId& id);

    void startup(const DeploymentId& id);
    void shutdown(const DeploymentId& id);

    InvokeResult invoke(const DeploymentId& id, const std::string& artifactRef, const nlohmann::json& payload,
        const std::optional<ResourceId>& resourceId = std::nullopt, std::optional<double> arrivalMs = std::nullopt);

    /// Probes every running handle once; the slowest round trip, or nullopt.
    std::optional<double> probeLatency(const Deployment& deployment);

    /// Per-resource probe round trips of a running deployment.
    std::map<ResourceId, double> probeByResource(const Deployment& deployment);

    /// Terminates the workload on `from`, moves the reservation to `to` and deploys there.
    void reassign(const DeploymentId& id, const ResourceId& from, const ResourceId& to);

    std::vector<DeploymentHandle> handles(const DeploymentId& id) const;

    const Testbed& catalog() const noexcept { return mCatalog; }
    ProviderSimulator& simulator() noexcept { return mSimulator; }

    /// Subscribes deployment.create/terminate/startup/shutdown/get/list/invoke.
    void bind();

    /// Blocks until no background job is running.
    void waitIdle();

private:
    struct HandleRef {
        ResourceId resourceId;
        Platform platform;
        std::string handleId;
        std::string artifactRef;
    };

    DeploymentId newId();
    void runJob(std::function<void()> job);
    void provision(const DeploymentId& id);
    void finishTermination(const DeploymentId& id);
    void runStartStop(const DeploymentId& id, bool start);
    void publishStatus(const Deployment& deployment);
    std::string credentialFor(const Deployment& deployment, Platform platform) const;
    /// Handles are stored aligned with assignments: handles[i] runs assignments[i].
    std::vector<HandleRef> handleRefs(const Deployment& deployment) const;

    Store& mStore;
    EventBus& mBus;
    ProviderSimulator& mSimulator;
    Testbed mCatalog;
    Options mOptions;

    std::mutex mCommandMutex;

    std::mutex mIdMutex;
    std::mt19937_64 mIdRng;

    std::mutex mJobsMutex;
    std::condition_variable mJobsCond;
    std::size_t mActiveJobs {0};

    std::vector<EventBus::Subscription> mSubscriptions;
    std::unique_ptr<ThreadPool> mWorkers;
};

} // namespace rm

#endif
