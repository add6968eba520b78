/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/provider_sim.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>

#include <rm/tsdb.hpp>

namespace rm {

namespace {

LatencySpec latencyFromJson(const nlohmann::json& j, LatencySpec fallback)
{
    if (j.is_number()) {
        fallback.meanMs = j.get<double>();
        return fallback;
    }
    fallback.meanMs = j.value("meanMs", j.value("mean", fallback.meanMs));
    fallback.jitterFraction = j.value("jitterFraction", j.value("jitter", fallback.jitterFraction));
    return fallback;
}

void validateLatency(const LatencySpec& spec, const char* what)
{
    if (!(spec.meanMs >= 0) || !std::isfinite(spec.meanMs)) {
        throw Error(ErrorCode::ConfigError, std::string(what) + " mean must be >= 0", {{"field", what}});
    }
    if (!(spec.jitterFraction >= 0 && spec.jitterFraction <= 0.5)) {
        throw Error(ErrorCode::ConfigError, std::string(what) + " jitterFraction must be in [0, 0.5]", {{"field", what}});
    }
}

std::string replicaId(const std::string& id, int replica)
{
    return replica == 1 ? id : id + "-" + std::to_string(replica);
}

} // namespace

std::string_view toString(ConcurrencyLimit limit)
{
    return limit == ConcurrencyLimit::CoresBound ? "CORES_BOUND" : "UNBOUNDED";
}

ConcurrencyLimit concurrencyLimitFromString(std::string_view name)
{
    if (name == "CORES_BOUND") {
        return ConcurrencyLimit::CoresBound;
    }
    if (name == "UNBOUNDED") {
        return ConcurrencyLimit::Unbounded;
    }
    throw Error(ErrorCode::ConfigError, "unknown concurrency limit '" + std::string(name) + "'");
}

void ProviderProfile::validate() const
{
    validateLatency(deployLatencyMs, "deployLatencyMs");
    validateLatency(terminateLatencyMs, "terminateLatencyMs");
    validateLatency(invokeNetworkMs, "invokeNetworkMs");
    validateLatency(startupLatencyMs, "startupLatencyMs");
    validateLatency(shutdownLatencyMs, "shutdownLatencyMs");
    if (!(perDeploymentPenaltyMs >= 0)) {
        throw Error(ErrorCode::ConfigError, "perDeploymentPenaltyMs must be >= 0");
    }
}

ProviderProfile defaultProfile(Platform platform)
{
    constexpr double cJitter = 0.05;
    constexpr double cNetworkJitter = 0.1;
    constexpr double cPenaltyFraction = 0.1;

    ProviderProfile p;
    p.platform = platform;
    switch (platform) {
    case Platform::FaasEdge:
        p.deployLatencyMs = {4000, cJitter};
        p.terminateLatencyMs = {1000, cJitter};
        p.invokeNetworkMs = {20, cNetworkJitter};
        p.startupLatencyMs = {400, cJitter};
        p.shutdownLatencyMs = {200, cJitter};
        p.concurrencyLimit = ConcurrencyLimit::CoresBound;
        break;
    case Platform::Container:
        p.deployLatencyMs = {8000, cJitter};
        p.terminateLatencyMs = {2000, cJitter};
        p.invokeNetworkMs = {20, cNetworkJitter};
        p.startupLatencyMs = {800, cJitter};
        p.shutdownLatencyMs = {400, cJitter};
        p.concurrencyLimit = ConcurrencyLimit::CoresBound;
        break;
    case Platform::Serverless:
        p.deployLatencyMs = {35000, cJitter};
        p.terminateLatencyMs = {12000, cJitter};
        p.invokeNetworkMs = {60, cNetworkJitter};
        p.startupLatencyMs = {2000, cJitter};
        p.shutdownLatencyMs = {1000, cJitter};
        p.concurrencyLimit = ConcurrencyLimit::Unbounded;
        break;
    case Platform::Vm:
        p.deployLatencyMs = {200000, cJitter};
        p.terminateLatencyMs = {65000, cJitter};
        p.invokeNetworkMs = {60, cNetworkJitter};
        p.startupLatencyMs = {15000, cJitter};
        p.shutdownLatencyMs = {8000, cJitter};
        p.concurrencyLimit = ConcurrencyLimit::CoresBound;
        break;
    }
    p.perDeploymentPenaltyMs = cPenaltyFraction * p.deployLatencyMs.meanMs;
    return p;
}

const Artifact* Testbed::findArtifact(const std::string& name) const
{
    for (const auto& artifact : artifacts) {
        if (artifact.name == name) {
            return &artifact;
        }
    }
    return nullptr;
}

const RegionConfig* Testbed::findRegion(const std::string& name) const
{
    for (const auto& region : regions) {
        if (region.name == name) {
            return &region;
        }
    }
    return nullptr;
}

Testbed testbedFromJson(const nlohmann::json& document)
{
    Testbed testbed;
    try {
        testbed.seed = document.value("seed", std::uint64_t {1});
        testbed.queueTimeoutMs = document.value("queueTimeoutMs", testbed.queueTimeoutMs);

        for (Platform platform : cAllPlatforms) {
            testbed.profiles[platform] = defaultProfile(platform);
            testbed.credentialPrefixes[platform] = "";
        }

        for (const auto& region : document.value("regions", nlohmann::json::array())) {
            testbed.regions.push_back({region.at("name").get<std::string>(), region.value("latencyMs", 0.0),
                region.value("reachable", true)});
        }

        if (document.contains("credentials")) {
            for (const auto& [platform, prefix] : document["credentials"].items()) {
                testbed.credentialPrefixes[platformFromString(platform)] = prefix.get<std::string>();
            }
        }

        if (document.contains("profiles")) {
            for (const auto& [name, overrides] : document["profiles"].items()) {
                auto& p = testbed.profiles[platformFromString(name)];
                if (overrides.contains("deployLatencyMs")) {
                    p.deployLatencyMs = latencyFromJson(overrides["deployLatencyMs"], p.deployLatencyMs);
                    p.perDeploymentPenaltyMs = 0.1 * p.deployLatencyMs.meanMs;
                }
                if (overrides.contains("terminateLatencyMs")) {
                    p.terminateLatencyMs = latencyFromJson(overrides["terminateLatencyMs"], p.terminateLatencyMs);
                }
                if (overrides.contains("invokeNetworkMs")) {
                    p.invokeNetworkMs = latencyFromJson(overrides["invokeNetworkMs"], p.invokeNetworkMs);
                }
                if (overrides.contains("startupLatencyMs")) {
                    p.startupLatencyMs = latencyFromJson(overrides["startupLatencyMs"], p.startupLatencyMs);
                }
                if (overrides.contains("shutdownLatencyMs")) {
                    p.shutdownLatencyMs = latencyFromJson(overrides["shutdownLatencyMs"], p.shutdownLatencyMs);
                }
                if (overrides.contains("concurrencyLimit")) {
                    p.concurrencyLimit = concurrencyLimitFromString(overrides["concurrencyLimit"].get<std::string>());
                }
                p.perDeploymentPenaltyMs = overrides.value("perDeploymentPenaltyMs", p.perDeploymentPenaltyMs);
            }
        }
        for (const auto& [platform, profile] : testbed.profiles) {
            profile.validate();
        }

        for (const auto& artifact : document.value("artifacts", nlohmann::json::array())) {
            testbed.artifacts.push_back(artifact.get<Artifact>());
        }

        for (const auto& entry : document.value("resources", nlohmann::json::array())) {
            ResourceRecord base = entry.get<ResourceRecord>();
            base.state = ResourceState::Available;
            base.deploymentId.reset();
            int replicas = entry.value("replicas", 1);
            if (replicas < 1) {
                throw Error(ErrorCode::ConfigError, "replicas must be >= 1", {{"field", "replicas"}});
            }
            for (int r = 1; r <= replicas; ++r) {
                ResourceRecord resource = base;
                resource.id = replicaId(base.id, r);
                if (!resource.metricsEndpoint) {
                    resource.metricsEndpoint = "sim://" + resource.id + "/metrics";
                }
                resource.validate();
                testbed.resources.push_back(resource);
            }
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("invalid testbed: ") + e.what(), {{"field", "testbed"}});
    }

    for (const auto& resource : testbed.resources) {
        if (!testbed.findRegion(resource.region)) {
            throw Error(ErrorCode::ConfigError, "resource " + resource.id + " names unknown region " + resource.region,
                {{"field", "resources"}});
        }
    }
    return testbed;
}

Testbed loadTestbed(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::ConfigError, "cannot read testbed config " + path.string(), {{"field", "testbedConfigPath"}});
    }
    nlohmann::json document;
    try {
        document = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("testbed config is not valid JSON: ") + e.what(),
            {{"field", "testbedConfigPath"}});
    }
    return testbedFromJson(document);
}

Testbed defaultTestbed()
{
    static const nlohmann::json document = R"({
      "seed": 42,
      "regions": [
        {"name": "uibk", "latencyMs": 5, "reachable": true},
        {"name": "us-east-1", "latencyMs": 90, "reachable": true},
        {"name": "us-west-2", "latencyMs": 150, "reachable": true}
      ],
      "credentials": {"FAAS_EDGE": "openfaas:", "CONTAINER": "k8s:", "SERVERLESS": "aws:", "VM": "aws:"},
      "artifacts": [
        {"name": "function1", "kind": "FUNCTION", "imageRef": "rm/sleep-1s:latest",
         "behavior": {"sleepMs": 1000, "imagePullMs": 0}},
        {"name": "function2", "kind": "FUNCTION", "imageRef": "rm/echo:latest",
         "behavior": {"sleepMs": 0, "imagePullMs": 0}},
        {"name": "service1", "kind": "CONTAINER_SERVICE", "imageRef": "nginx:stable",
         "behavior": {"sleepMs": 0, "imagePullMs": 1000}}
      ],
      "resources": [
        {"id": "r1", "platform": "FAAS_EDGE", "region": "uibk", "cpuCores": 8, "memoryGb": 16, "storageGb": 64, "costPerHour": 0.01},
        {"id": "r2", "platform": "FAAS_EDGE", "region": "uibk", "cpuCores": 4, "memoryGb": 1, "storageGb": 16, "costPerHour": 0.005},
        {"id": "r3", "platform": "FAAS_EDGE", "region": "uibk", "cpuCores": 4, "memoryGb": 4, "storageGb": 32, "costPerHour": 0.005},
        {"id": "r4", "platform": "CONTAINER", "region": "uibk", "cpuCores": 2, "memoryGb": 2, "storageGb": 30, "costPerHour": 0.02},
        {"id": "r5", "platform": "CONTAINER", "region": "uibk", "cpuCores": 4, "memoryGb": 4, "storageGb": 30, "costPerHour": 0.02},
        {"id": "r6", "platform": "CONTAINER", "region": "uibk", "cpuCores": 4, "memoryGb": 4, "storageGb": 30, "costPerHour": 0.02},
        {"id": "r7", "platform": "CONTAINER", "region": "uibk", "cpuCores": 8, "memoryGb": 8, "storageGb": 30, "costPerHour": 0.02},
        {"id": "r8", "platform": "CONTAINER", "region": "uibk", "cpuCores": 2, "memoryGb": 4, "storageGb": 30, "costPerHour": 0.02},
        {"id": "r9", "platform": "CONTAINER", "region": "uibk", "cpuCores": 8, "memoryGb": 8, "storageGb": 30, "costPerHour": 0.02},
        {"id": "r10", "platform": "CONTAINER", "region": "uibk", "cpuCores": 8, "memoryGb": 8, "storageGb": 160, "costPerHour": 0.03},
        {"id": "r11", "platform": "VM", "region": "us-east-1", "cpuCores": 2, "memoryGb": 8, "storageGb": 8, "costPerHour": 0.0928},
        {"id": "r12", "platform": "SERVERLESS", "region": "us-east-1", "cpuCores": 6, "memoryGb": 0.128, "storageGb": 0.512, "costPerHour": 0.0},
        {"id": "r13", "platform": "SERVERLESS", "region": "us-west-2", "cpuCores": 6, "memoryGb": 0.128, "storageGb": 0.512, "costPerHour": 0.0}
      ]
    })"_json;
    return testbedFromJson(document);
}

Testbed withReplicas(Testbed testbed, int replicas)
{
    if (replicas <= 1) {
        return testbed;
    }
    std::vector<ResourceRecord> expanded;
    for (const auto& resource : testbed.resources) {
        for (int r = 1; r <= replicas; ++r) {
            ResourceRecord copy = resource;
            copy.id = replicaId(resource.id, r);
            copy.metricsEndpoint = "sim://" + copy.id + "/metrics";
            expanded.push_back(copy);
        }
    }
    testbed.resources = std::move(expanded);
    return testbed;
}

/*
 * SimulatedDriver.
 */

SimulatedDriver::SimulatedDriver(ProviderSimulator& simulator, ProviderProfile profile, std::string credentialPrefix)
    : mSimulator(simulator)
    , mProfile(std::move(profile))
    , mCredentialPrefix(std::move(credentialPrefix))
    , mRng(simulator.seed() ^ (0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(mProfile.platform) + 1)))
{
    mProfile.validate();
}

bool SimulatedDriver::checkCredentials(const std::string& credentials) const
{
    if (credentials.empty()) {
        return false;
    }
    return credentials.rfind(mCredentialPrefix, 0) == 0;
}

double SimulatedDriver::sample(const LatencySpec& spec, double extraMeanMs)
{
    double mean = spec.meanMs + extraMeanMs;
    double stddev = spec.jitterFraction * mean;
    if (stddev <= 0) {
        return std::max(0.0, mean);
    }
    std::normal_distribution<double> distribution(mean, stddev);
    return std::max(0.0, distribution(mRng));
}

int SimulatedDriver::pullImage(const ResourceRecord& resource, const std::string& imageRef, std::int64_t pullMs)
{
    auto key = std::make_pair(resource.id, imageRef);
    {
        std::lock_guard lock(mMutex);
        if (mImageCache.count(key)) {
            return mPulls[key];
        }
    }
    mSimulator.wait(static_cast<double>(pullMs));
    std::lock_guard lock(mMutex);
    if (mImageCache.insert(key).second) {
        ++mPulls[key];
    }
    return mPulls[key];
}

DeploymentHandle SimulatedDriver::deploy(const ResourceRecord& resource, const Artifact& artifact,
    const std::string& credentials, const DeploymentId& deploymentId)
{
    if (resource.platform != mProfile.platform) {
        throw Error(ErrorCode::InvalidArgument, "resource " + resource.id + " is not a " + std::string(toString(platform())) + " resource");
    }
    if (!isCompatible(artifact.kind, resource.platform)) {
        throw Error(ErrorCode::IncompatibleArtifact,
            std::string(toString(artifact.kind)) + " cannot run on " + std::string(toString(resource.platform)),
            {{"resource", resource.id}, {"artifact", artifact.name}});
    }
    if (!checkCredentials(credentials)) {
        throw Error(ErrorCode::InvalidCredentials, "credentials rejected by " + std::string(toString(platform())),
            {{"platform", toString(platform())}});
    }
    if (!mSimulator.isReachable(resource)) {
        throw Error(ErrorCode::ProviderUnreachable, "resource " + resource.id + " is unreachable", {{"resource", resource.id}});
    }

    const DeploymentId inflightKey = deploymentId.empty() ? "handle:" + resource.id : deploymentId;
    double latency = 0.0;
    {
        std::lock_guard lock(mMutex);
        mInFlight.insert(inflightKey);
        std::set<DeploymentId> distinct(mInFlight.begin(), mInFlight.end());
        double others = static_cast<double>(distinct.size() - 1);
        latency = sample(mProfile.deployLatencyMs, mProfile.perDeploymentPenaltyMs * others);
    }

    struct InFlightGuard {
        SimulatedDriver& driver;
        const DeploymentId& key;
        ~InFlightGuard()
        {
            std::lock_guard lock(driver.mMutex);
            driver.mInFlight.erase(driver.mInFlight.find(key));
        }
    } guard {*this, inflightKey};

    int pulls = pullImage(resource, artifact.imageRef, artifact.behavior.imagePullMs);
    mSimulator.wait(latency);

    if (mSimulator.shouldFailDeploy()) {
        throw Error(ErrorCode::ProviderUnreachable, "simulated provider failure on " + resource.id, {{"resource", resource.id}});
    }

    std::lock_guard lock(mMutex);
    HandleState state;
    state.handle.handleId = std::string(toString(platform())) + "-" + std::to_string(mNextHandle++);
    state.handle.resourceId = resource.id;
    state.handle.artifactRef = artifact.name;
    state.handle.pullCount = pulls;
    state.handle.running = true;
    state.artifact = artifact;
    state.resource = resource;
    auto handle = state.handle;
    mHandles.emplace(handle.handleId, std::move(state));
    return handle;
}

void SimulatedDriver::terminate(const std::string& handleId)
{
    double latency = 0.0;
    {
        std::lock_guard lock(mMutex);
        auto it = mHandles.find(handleId);
        if (it == mHandles.end()) {
            throw Error(ErrorCode::UnknownHandle, "unknown handle " + handleId, {{"handle", handleId}});
        }
        mHandles.erase(it);
        latency = sample(mProfile.terminateLatencyMs);
    }
    mSimulator.wait(latency);
}

InvokeResult SimulatedDriver::invoke(const std::string& handleId, const nlohmann::json& payload, std::optional<double> arrivalMs)
{
    std::lock_guard lock(mMutex);
    auto it = mHandles.find(handleId);
    if (it == mHandles.end()) {
        throw Error(ErrorCode::UnknownHandle, "unknown handle " + handleId, {{"handle", handleId}});
    }
    if (!it->second.handle.running) {
        throw Error(ErrorCode::NotRunning, "handle " + handleId + " is not running", {{"handle", handleId}});
    }
    const auto& state = it->second;

    InvokeResult result;
    result.networkMs = sample(mProfile.invokeNetworkMs) + mSimulator.injectedLatency(state.resource.id);
    result.serviceMs = static_cast<double>(state.artifact.behavior.sleepMs);

    if (mProfile.concurrencyLimit == ConcurrencyLimit::CoresBound) {
        double arrival = arrivalMs.value_or(mSimulator.virtualNowMs());
        auto& queue = mQueues[state.resource.id];
        if (queue.coreFreeAt.empty()) {
            queue.coreFreeAt.assign(static_cast<std::size_t>(std::max(1, state.resource.cpuCores)), 0.0);
        }
        std::pop_heap(queue.coreFreeAt.begin(), queue.coreFreeAt.end(), std::greater<> {});
        double freeAt = queue.coreFreeAt.back();
        double start = std::max(arrival, freeAt);
        if (start - arrival > mSimulator.queueTimeoutMs()) {
            std::push_heap(queue.coreFreeAt.begin(), queue.coreFreeAt.end(), std::greater<> {});
            throw Error(ErrorCode::QueueTimeout, "invocation queued longer than the configured cap",
                {{"handle", handleId}, {"waitMs", start - arrival}});
        }
        queue.coreFreeAt.back() = start + result.serviceMs;
        std::push_heap(queue.coreFreeAt.begin(), queue.coreFreeAt.end(), std::greater<> {});
        result.queueMs = start - arrival;
    }

    result.rttMs = result.networkMs + result.queueMs + result.serviceMs;
    result.response = {{"handle", handleId}, {"artifact", state.artifact.name}, {"echo", payload}};
    return result;
}

void SimulatedDriver::prePull(const ResourceRecord& resource, const std::string& imageRef, std::int64_t pullMs)
{
    pullImage(resource, imageRef, pullMs);
}

void SimulatedDriver::startup(const std::string& handleId)
{
    ResourceRecord resource;
    Artifact artifact;
    double latency = 0.0;
    {
        std::lock_guard lock(mMutex);
        auto it = mHandles.find(handleId);
        if (it == mHandles.end()) {
            throw Error(ErrorCode::UnknownHandle, "unknown handle " + handleId, {{"handle", handleId}});
        }
        if (it->second.handle.running) {
            return;
        }
        resource = it->second.resource;
        artifact = it->second.artifact;
        latency = sample(mProfile.startupLatencyMs);
    }

    int pulls = pullImage(resource, artifact.imageRef, artifact.behavior.imagePullMs);
    mSimulator.wait(latency);

    std::lock_guard lock(mMutex);
    if (auto it = mHandles.find(handleId); it != mHandles.end()) {
        it->second.handle.running = true;
        it->second.handle.pullCount = pulls;
    }
}

void SimulatedDriver::shutdown(const std::string& handleId)
{
    double latency = 0.0;
    {
        std::lock_guard lock(mMutex);
        auto it = mHandles.find(handleId);
        if (it == mHandles.end()) {
            throw Error(ErrorCode::UnknownHandle, "unknown handle " + handleId, {{"handle", handleId}});
        }
        if (!it->second.handle.running) {
            return;
        }
        latency = sample(mProfile.shutdownLatencyMs);
    }
    mSimulator.wait(latency);

    std::lock_guard lock(mMutex);
    if (auto it = mHandles.find(handleId); it != mHandles.end()) {
        it->second.handle.running = false;
    }
}

DeploymentHandle SimulatedDriver::handle(const std::string& handleId) const
{
    std::lock_guard lock(mMutex);
    auto it = mHandles.find(handleId);
    if (it == mHandles.end()) {
        throw Error(ErrorCode::UnknownHandle, "unknown handle " + handleId, {{"handle", handleId}});
    }
    return it->second.handle;
}

std::size_t SimulatedDriver::handlesOn(const ResourceId& resourceId) const
{
    std::lock_guard lock(mMutex);
    return static_cast<std::size_t>(std::count_if(
        mHandles.begin(), mHandles.end(), [&](const auto& entry) { return entry.second.resource.id == resourceId; }));
}

std::size_t SimulatedDriver::runningOn(const ResourceId& resourceId) const
{
    std::lock_guard lock(mMutex);
    return static_cast<std::size_t>(std::count_if(mHandles.begin(), mHandles.end(), [&](const auto& entry) {
        return entry.second.resource.id == resourceId && entry.second.handle.running;
    }));
}

/*
 * ProviderSimulator.
 */

ProviderSimulator::ProviderSimulator(const Testbed& testbed, double timeScale)
    : mSeed(testbed.seed)
    , mTimeScale(timeScale)
    , mQueueTimeoutMs(testbed.queueTimeoutMs)
    , mStartMs(steadyMs())
    , mFaultRng(testbed.seed * 31 + 7)
{
    if (!(timeScale >= 0) || !std::isfinite(timeScale)) {
        throw Error(ErrorCode::ConfigError, "timeScale must be a finite non-negative number", {{"field", "timeScale"}});
    }
    for (const auto& region : testbed.regions) {
        mRegions[region.name] = region;
    }
    for (Platform platform : cAllPlatforms) {
        auto profile = testbed.profiles.count(platform) ? testbed.profiles.at(platform) : defaultProfile(platform);
        auto prefix = testbed.credentialPrefixes.count(platform) ? testbed.credentialPrefixes.at(platform) : "";
        mDrivers[platform] = std::make_unique<SimulatedDriver>(*this, profile, prefix);
    }
}

ProviderDriver& ProviderSimulator::driver(Platform platform)
{
    return *mDrivers.at(platform);
}

SimulatedDriver& ProviderSimulator::simulatedDriver(Platform platform)
{
    return *mDrivers.at(platform);
}

void ProviderSimulator::wait(double simulatedMs) const
{
    sleepMs(simulatedMs * mTimeScale);
}

double ProviderSimulator::virtualNowMs() const
{
    double elapsed = steadyMs() - mStartMs;
    return mTimeScale > 0 ? elapsed / mTimeScale : elapsed;
}

ProbeResult ProviderSimulator::probe(const std::string& region) const
{
    std::lock_guard lock(mMutex);
    auto it = mRegions.find(region);
    if (it == mRegions.end()) {
        throw Error(ErrorCode::NotFound, "unknown region " + region, {{"region", region}});
    }
    if (!it->second.reachable) {
        return {std::numeric_limits<double>::infinity(), false};
    }
    return {it->second.latencyMs, true};
}

void ProviderSimulator::setRegionReachable(const std::string& region, bool reachable)
{
    std::lock_guard lock(mMutex);
    auto it = mRegions.find(region);
    if (it == mRegions.end()) {
        throw Error(ErrorCode::NotFound, "unknown region " + region, {{"region", region}});
    }
    it->second.reachable = reachable;
}

std::vector<RegionConfig> ProviderSimulator::regions() const
{
    std::lock_guard lock(mMutex);
    std::vector<RegionConfig> result;
    for (const auto& [name, region] : mRegions) {
        result.push_back(region);
    }
    return result;
}

bool ProviderSimulator::isReachable(const ResourceRecord& resource) const
{
    if (resource.state == ResourceState::Unreachable) {
        return false;
    }
    std::lock_guard lock(mMutex);
    if (mDownResources.count(resource.id)) {
        return false;
    }
    auto it = mRegions.find(resource.region);
    return it == mRegions.end() || it->second.reachable;
}

void ProviderSimulator::setResourceDown(const ResourceId& resourceId, bool down)
{
    std::lock_guard lock(mMutex);
    if (down) {
        mDownResources.insert(resourceId);
    } else {
        mDownResources.erase(resourceId);
    }
}

std::vector<MetricSample> ProviderSimulator::scrapeMetrics(const ResourceRecord& resource) const
{
    if (!isReachable(resource)) {
        throw Error(ErrorCode::ProviderUnreachable, "resource " + resource.id + " is unreachable", {{"resource", resource.id}});
    }

    auto& drv = *mDrivers.at(resource.platform);
    double running = static_cast<double>(drv.runningOn(resource.id));
    double cores = static_cast<double>(resource.cpuCores);
    // Idle baseline plus one core's worth of load per running workload.
    double cpu = std::min(1.0, 0.02 + running / cores);
    double memory = std::min(resource.memoryGb, resource.memoryGb * 0.1 + 0.05 * running);

    TimestampMs now = nowMs();
    return {
        {"node.cpu.utilization", now, cpu, {{"resource", resource.id}}},
        {"node.memory.usedGb", now, memory, {{"resource", resource.id}}},
    };
}

std::string ProviderSimulator::scrapeText(const ResourceRecord& resource) const
{
    return formatExposition(scrapeMetrics(resource));
}

void ProviderSimulator::injectLatency(const ResourceId& resourceId, double extraMs)
{
    std::lock_guard lock(mMutex);
    if (extraMs <= 0) {
        mInjectedLatency.erase(resourceId);
    } else {
        mInjectedLatency[resourceId] = extraMs;
    }
}

double ProviderSimulator::injectedLatency(const ResourceId& resourceId) const
{
    std::lock_guard lock(mMutex);
    auto it = mInjectedLatency.find(resourceId);
    return it == mInjectedLatency.end() ? 0.0 : it->second;
}

void ProviderSimulator::setDeployFailureProbability(double probability)
{
    std::lock_guard lock(mMutex);
    mFailureProbability = std::clamp(probability, 0.0, 1.0);
}

void ProviderSimulator::failNextDeploys(int count)
{
    std::lock_guard lock(mMutex);
    mFailNext = std::max(0, count);
}

bool ProviderSimulator::shouldFailDeploy()
{
    std::lock_guard lock(mMutex);
    if (mFailNext > 0) {
        --mFailNext;
        return true;
    }
    if (mFailureProbability <= 0) {
        return false;
    }
    return std::uniform_real_distribution<double>(0.0, 1.0)(mFaultRng) < mFailureProbability;
}

} // namespace rm
