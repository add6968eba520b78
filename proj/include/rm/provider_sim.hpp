/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_PROVIDER_SIM_HPP_
#define RM_PROVIDER_SIM_HPP_

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include <rm/domain.hpp>

namespace rm {

/*
 * Profiles and testbed configuration.
 */

struct LatencySpec {
    double meanMs {0.0};
    double jitterFraction {0.0};
};

enum class ConcurrencyLimit { CoresBound, Unbounded };

std::string_view toString(ConcurrencyLimit limit);
ConcurrencyLimit concurrencyLimitFromString(std::string_view name);

struct ProviderProfile {
    Platform platform {Platform::FaasEdge};
    LatencySpec deployLatencyMs;
    LatencySpec terminateLatencyMs;
    LatencySpec invokeNetworkMs;
    LatencySpec startupLatencyMs;
    LatencySpec shutdownLatencyMs;
    ConcurrencyLimit concurrencyLimit {ConcurrencyLimit::CoresBound};
    /// Added to the deploy mean for every other deployment in flight on the same platform.
    double perDeploymentPenaltyMs {0.0};

    void validate() const;
};

/// Built-in profile for a platform (all values in unscaled milliseconds).
ProviderProfile defaultProfile(Platform platform);

struct RegionConfig {
    std::string name;
    double latencyMs {0.0};
    bool reachable {true};
};

struct Testbed {
    std::uint64_t seed {1};
    /// Invocations waiting longer than this in a core-bound queue fail with QueueTimeout.
    double queueTimeoutMs {3'600'000.0};
    std::vector<RegionConfig> regions;
    /// Credentials for a platform are accepted when they start with this prefix.
    std::map<Platform, std::string> credentialPrefixes;
    std::map<Platform, ProviderProfile> profiles;
    std::vector<Artifact> artifacts;
    std::vector<ResourceRecord> resources;

    const Artifact* findArtifact(const std::string& name) const;
    const RegionConfig* findRegion(const std::string& name) const;
};

/// Parses a testbed document. Profile entries override individual fields of the defaults;
/// a resource entry with "replicas": n expands into ids id, id-2, ..., id-n.
Testbed testbedFromJson(const nlohmann::json& document);
Testbed loadTestbed(const std::filesystem::path& path);

/// The reference continuum testbed: three edge FaaS nodes, seven container nodes,
/// one VM and two serverless regions.
Testbed defaultTestbed();

/// Multiplies every resource of the testbed `replicas` times (ids id, id-2, ...).
Testbed withReplicas(Testbed testbed, int replicas);

/*
 * Drivers.
 */

struct DeploymentHandle {
    std::string handleId;
    ResourceId resourceId;
    std::string artifactRef;
    int pullCount {0};
    bool running {false};
};

struct InvokeResult {
    nlohmann::json response;
    /// network + queueing + service, in unscaled milliseconds.
    double rttMs {0.0};
    double networkMs {0.0};
    double queueMs {0.0};
    double serviceMs {0.0};
};

struct ProbeResult {
    double latencyMs {0.0};
    bool reachable {false};
};

/**
 * Provider driver contract. deploy/terminate/startup/shutdown block for the
 * provider's latency; invoke returns the modelled round trip without blocking.
 */
class ProviderDriver {
public:
    virtual ~ProviderDriver() = default;

    virtual Platform platform() const = 0;
    virtual bool checkCredentials(const std::string& credentials) const = 0;

    virtual DeploymentHandle deploy(const ResourceRecord& resource, const Artifact& artifact,
        const std::string& credentials, const DeploymentId& deploymentId)
        = 0;
    virtual void terminate(const std::string& handleId) = 0;

    /// `arrivalMs` is the virtual arrival instant; defaults to the driver's virtual now.
    virtual InvokeResult invoke(
        const std::string& handleId, const nlohmann::json& payload, std::optional<double> arrivalMs = std::nullopt)
        = 0;

    virtual void prePull(const ResourceRecord& resource, const std::string& imageRef, std::int64_t pullMs) = 0;
    virtual void startup(const std::string& handleId) = 0;
    virtual void shutdown(const std::string& handleId) = 0;

    virtual DeploymentHandle handle(const std::string& handleId) const = 0;
};

class ProviderSimulator;

/// Simulated driver for one platform, timed by its ProviderProfile.
class SimulatedDriver : public ProviderDriver {
public:
    SimulatedDriver(ProviderSimulator& simulator, ProviderProfile profile, std::string credentialPrefix);

    Platform platform() const override { return mProfile.platform; }
    bool checkCredentials(const std::string& credentials) const override;

    DeploymentHandle deploy(const ResourceRecord& resource, const Artifact& artifact, const std::string& credentials,
        const DeploymentId& deploymentId) override;
    void terminate(const std::string& handleId) override;
    InvokeResult invoke(
        const std::string& handleId, const nlohmann::json& payload, std::optional<double> arrivalMs) override;
    void prePull(const ResourceRecord& resource, const std::string& imageRef, std::int64_t pullMs) override;
    void startup(const std::string& handleId) override;
    void shutdown(const std::string& handleId) override;
    DeploymentHandle handle(const std::string& handleId) const override;

    const ProviderProfile& profile() const noexcept { return mProfile; }

    /// Number of live handles placed on a resource.
    std::size_t handlesOn(const ResourceId& resourceId) const;
    std::size_t runningOn(const ResourceId& resourceId) const;

private:
    struct HandleState {
        DeploymentHandle handle;
        Artifact artifact;
        ResourceRecord resource;
    };

    struct ResourceQueue {
        /// Earliest virtual time each core becomes free (min-heap).
        std::vector<double> coreFreeAt;
    };

    double sample(const LatencySpec& spec, double extraMeanMs = 0.0);
    int pullImage(const ResourceRecord& resource, const std::string& imageRef, std::int64_t pullMs);

    ProviderSimulator& mSimulator;
    ProviderProfile mProfile;
    std::string mCredentialPrefix;

    mutable std::mutex mMutex;
    std::mt19937_64 mRng;
    std::map<std::string, HandleState> mHandles;
    std::map<ResourceId, ResourceQueue> mQueues;
    std::map<std::pair<ResourceId, std::string>, int> mPulls;
    std::set<std::pair<ResourceId, std::string>> mImageCache;
    std::multiset<DeploymentId> mInFlight;
    std::uint64_t mNextHandle {1};
};

/**
 * The simulated continuum: one driver per platform, the region table, node
 * metrics, and fault/latency injection hooks used by tests and the bench harness.
 */
class ProviderSimulator {
public:
    ProviderSimulator(const Testbed& testbed, double timeScale);

    ProviderDriver& driver(Platform platform);
    SimulatedDriver& simulatedDriver(Platform platform);

    double timeScale() const noexcept { return mTimeScale; }
    std::uint64_t seed() const noexcept { return mSeed; }
    double queueTimeoutMs() const noexcept { return mQueueTimeoutMs; }

    /// Real-time sleep for a simulated duration (ms * timeScale).
    void wait(double simulatedMs) const;

    /// Virtual clock in unscaled milliseconds since the simulator started.
    double virtualNowMs() const;

    /// Latest region table entry; throws NotFound for unknown regions.
    ProbeResult probe(const std::string& region) const;
    void setRegionReachable(const std::string& region, bool reachable);
    std::vector<RegionConfig> regions() const;

    /// Node utilisation samples for a resource; throws ProviderUnreachable when the
    /// resource or its region is down.
    std::vector<MetricSample> scrapeMetrics(const ResourceRecord& resource) const;
    /// Same samples in exposition text.
    std::string scrapeText(const ResourceRecord& resource) const;

    /// Extra latency added to every invocation on a resource (0 clears).
    void injectLatency(const ResourceId& resourceId, double extraMs);
    double injectedLatency(const ResourceId& resourceId) const;

    /// Each deploy fails with this probability (seeded).
    void setDeployFailureProbability(double probability);
    /// The next `count` deploys fail.
    void failNextDeploys(int count);
    bool shouldFailDeploy();

    void setResourceDown(const ResourceId& resourceId, bool down);
    bool isReachable(const ResourceRecord& resource) const;

private:
    std::uint64_t mSeed;
    double mTimeScale;
    double mQueueTimeoutMs;
    double mStartMs;

    mutable std::mutex mMutex;
    std::map<std::string, RegionConfig> mRegions;
    std::map<ResourceId, double> mInjectedLatency;
    std::set<ResourceId> mDownResources;
    double mFailureProbability {0.0};
    int mFailNext {0};
    std::mt19937_64 mFaultRng;

    std::map<Platform, std::unique_ptr<SimulatedDriver>> mDrivers;
};

} // namespace rm

#endif
