/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/engine.hpp>

#include <future>
#include <regex>
#include <set>

#include <spdlog/spdlog.h>

namespace rm {

namespace {

constexpr const char* cStatusAddress = "deployment.status";

std::string hex(std::uint64_t value, int digits)
{
    static constexpr char cDigits[] = "0123456789abcdef";
    std::string out(digits, '0');
    for (int i = digits - 1; i >= 0; --i) {
        out[i] = cDigits[value & 0xF];
        value >>= 4;
    }
    return out;
}

// Runs fn(i) for every index concurrently; collects the first error per index.
template <typename Fn>
std::vector<std::exception_ptr> fanOut(std::size_t count, Fn fn)
{
    std::vector<std::exception_ptr> errors(count);
    if (count == 1) {
        try {
            fn(0);
        } catch (...) {
            errors[0] = std::current_exception();
        }
        return errors;
    }
    std::vector<std::future<void>> futures;
    futures.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        futures.push_back(std::async(std::launch::async, [&fn, i] { fn(i); }));
    }
    for (std::size_t i = 0; i < count; ++i) {
        try {
            futures[i].get();
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    return errors;
}

std::string describe(const std::exception_ptr& error)
{
    try {
        std::rethrow_exception(error);
    } catch (const std::exception& e) {
        return e.what();
    } catch (...) {
        return "unknown error";
    }
}

} // namespace

bool isWellFormedUrl(const std::string& url)
{
    static const std::regex cUrl(R"(^https?://[A-Za-z0-9.\-]+(:[0-9]{1,5})?(/[^\s]*)?$)");
    return std::regex_match(url, cUrl);
}

DeploymentRequest DeploymentRequest::fromJson(const nlohmann::json& body, const std::string& ownerId)
{
    auto malformed = [](const std::string& reason) {
        return Error(ErrorCode::ValidationFailed, reason, {{"reasons", {reason}}});
    };
    if (!body.is_object()) {
        throw malformed("request body must be an object");
    }

    DeploymentRequest request;
    request.ownerId = ownerId;

    if (body.contains("assignments")) {
        const auto& list = body.at("assignments");
        if (!list.is_array()) {
            throw malformed("assignments must be an array");
        }
        for (const auto& item : list) {
            if (!item.is_object() || !item.contains("resourceId") || !item.at("resourceId").is_string()) {
                throw malformed("each assignment needs a resourceId string");
            }
            Assignment assignment;
            assignment.resourceId = item.at("resourceId").get<std::string>();
            if (item.contains("artifact")) {
                if (!item.at("artifact").is_string()) {
                    throw malformed("assignment artifact must be a string");
                }
                assignment.artifactRef = item.at("artifact").get<std::string>();
            }
            request.assignments.push_back(std::move(assignment));
        }
    }

    if (body.contains("slos")) {
        const auto& list = body.at("slos");
        if (!list.is_array()) {
            throw malformed("slos must be an array");
        }
        for (const auto& item : list) {
            if (item.is_string()) {
                request.slos.push_back(item.get<std::string>());
            } else if (item.is_object() && item.contains("metric") && item.contains("comparator")
                && item.contains("threshold")) {
                try {
                    request.slos.push_back(formatSlo(item.get<ServiceLevelObjective>()));
                } catch (const std::exception& e) {
                    throw malformed(std::string("malformed SLO: ") + e.what());
                }
            } else {
                throw malformed("each SLO must be a string such as \"latency < 10s\"");
            }
        }
    }

    if (body.contains("alerting")) {
        const auto& alerting = body.at("alerting");
        if (!alerting.is_object()) {
            throw malformed("alerting must be an object");
        }
        if (alerting.contains("enabled")) {
            if (!alerting.at("enabled").is_boolean()) {
                throw malformed("alerting.enabled must be a boolean");
            }
            request.alerting.enabled = alerting.at("enabled").get<bool>();
        }
        if (alerting.contains("webhookUrl")) {
            if (!alerting.at("webhookUrl").is_string()) {
                throw malformed("alerting.webhookUrl must be a string");
            }
            request.alerting.webhookUrl = alerting.at("webhookUrl").get<std::string>();
        }
    }

    if (body.contains("credentials")) {
        const auto& credentials = body.at("credentials");
        if (!credentials.is_object()) {
            throw malformed("credentials must be an object keyed by platform");
        }
        for (const auto& [key, value] : credentials.items()) {
            Platform platform;
            try {
                platform = platformFromString(key);
            } catch (const Error&) {
                throw malformed("unknown platform '" + key + "' in credentials");
            }
            if (!value.is_string()) {
                throw malformed("credentials for " + key + " must be a string");
            }
            request.credentials[platform] = value.get<std::string>();
        }
    }
    return request;
}

DeploymentEngine::DeploymentEngine(Store& store, EventBus& bus, ProviderSimulator& simulator, Testbed catalog)
    : DeploymentEngine(store, bus, simulator, std::move(catalog), Options {})
{
}

DeploymentEngine::DeploymentEngine(
    Store& store, EventBus& bus, ProviderSimulator& simulator, Testbed catalog, Options options)
    : mStore(store)
    , mBus(bus)
    , mSimulator(simulator)
    , mCatalog(std::move(catalog))
    , mOptions(options)
    , mIdRng(std::random_device {}())
    , mWorkers(std::make_unique<ThreadPool>(std::max<std::size_t>(1, options.backgroundWorkers)))
{
}

DeploymentEngine::~DeploymentEngine()
{
    mSubscriptions.clear();
    waitIdle();
    mWorkers.reset();
}

ValidationResult DeploymentEngine::validate(const DeploymentRequest& request) const
{
    ValidationResult result;
    auto& reasons = result.reasons;

    if (request.assignments.empty()) {
        reasons.emplace_back("no resources requested");
    }

    std::set<ResourceId> seen;
    for (const auto& assignment : request.assignments) {
        const auto& rid = assignment.resourceId;
        if (!seen.insert(rid).second) {
            reasons.push_back("resource " + rid + " is listed more than once");
            continue;
        }
        auto resource = mStore.findResource(rid);
        if (!resource) {
            reasons.push_back("unknown resource " + rid);
            continue;
        }
        const Artifact* artifact = mCatalog.findArtifact(assignment.artifactRef);
        if (!artifact) {
            reasons.push_back("unknown artifact '" + assignment.artifactRef + "' for resource " + rid);
        } else if (!isCompatible(artifact->kind, resource->platform)) {
            reasons.push_back("artifact " + artifact->name + " (" + std::string(toString(artifact->kind))
                + ") cannot run on resource " + rid + " (" + std::string(toString(resource->platform)) + ")");
        }

        auto platformName = std::string(toString(resource->platform));
        auto cred = request.credentials.find(resource->platform);
        if (cred == request.credentials.end()) {
            reasons.push_back("missing credentials for " + platformName + " resource " + rid);
        } else if (!mSimulator.driver(resource->platform).checkCredentials(cred->second)) {
            reasons.push_back("invalid credentials for " + platformName + " resource " + rid);
        }

        if (!mSimulator.isReachable(*resource)) {
            reasons.push_back("resource " + rid + " is unreachable");
        }
    }

    for (const auto& text : request.slos) {
        try {
            parseSlo(text, mOptions.evaluationIntervalMs);
        } catch (const Error& e) {
            reasons.push_back("malformed SLO '" + text + "': " + e.what());
        }
    }

    if (request.alerting.enabled && !isWellFormedUrl(request.alerting.webhookUrl)) {
        reasons.push_back("malformed webhook URL '" + request.alerting.webhookUrl + "'");
    }
    return result;
}

DeploymentPlan DeploymentEngine::plan(const Deployment& deployment) const
{
    DeploymentPlan plan;
    plan.deploymentId = deployment.id;
    plan.createdAtMs = nowMs();
    std::set<ResourceId> seen;
    for (const auto& assignment : deployment.assignments) {
        if (!seen.insert(assignment.resourceId).second) {
            throw Error(ErrorCode::InvalidArgument, "resource " + assignment.resourceId + " appears twice in plan");
        }
        PlanStep step;
        step.resourceId = assignment.resourceId;
        step.platform = mStore.getResource(assignment.resourceId).platform;
        step.artifactRef = assignment.artifactRef;
        plan.steps.push_back(std::move(step));
    }
    return plan;
}

DeploymentId DeploymentEngine::newId()
{
    std::lock_guard lock(mIdMutex);
    return "d-" + hex(mIdRng(), 12);
}

void DeploymentEngine::runJob(std::function<void()> job)
{
    {
        std::lock_guard lock(mJobsMutex);
        ++mActiveJobs;
    }
    mWorkers->post([this, job = std::move(job)] {
        try {
            job();
        } catch (const std::exception& e) {
            spdlog::error("engine: background job failed: {}", e.what());
        }
        std::lock_guard lock(mJobsMutex);
        if (--mActiveJobs == 0) {
            mJobsCond.notify_all();
        }
    });
}

void DeploymentEngine::waitIdle()
{
    std::unique_lock lock(mJobsMutex);
    mJobsCond.wait(lock, [this] { return mActiveJobs == 0; });
}

void DeploymentEngine::publishStatus(const Deployment& deployment)
{
    TimestampMs at = deployment.transitions.empty() ? nowMs() : deployment.transitions.back().atMs;
    mBus.publish(cStatusAddress, {{"id", deployment.id}, {"status", toString(deployment.status)}, {"atMs", at}});
}

std::string DeploymentEngine::credentialFor(const Deployment& deployment, Platform platform) const
{
    auto stored = mStore.credentials(deployment.credentialsRef);
    std::string key(toString(platform));
    if (!stored || !stored->contains(key)) {
        throw Error(ErrorCode::InvalidCredentials, "no credentials stored for " + key, {{"platform", key}});
    }
    return stored->at(key).get<std::string>();
}

std::vector<DeploymentEngine::HandleRef> DeploymentEngine::handleRefs(const Deployment& deployment) const
{
    std::vector<HandleRef> refs;
    for (std::size_t i = 0; i < deployment.assignments.size() && i < deployment.handles.size(); ++i) {
        if (deployment.handles[i].empty()) {
            continue;
        }
        const auto& assignment = deployment.assignments[i];
        auto resource = mStore.findResource(assignment.resourceId);
        if (!resource) {
            continue;
        }
        refs.push_back({assignment.resourceId, resource->platform, deployment.handles[i], assignment.artifactRef});
    }
    return refs;
}

DeploymentId DeploymentEngine::createDeployment(const DeploymentRequest& request)
{
    std::lock_guard command(mCommandMutex);

    auto validation = validate(request);
    if (!validation.ok()) {
        throw Error(ErrorCode::ValidationFailed, "deployment request is invalid", {{"reasons", validation.reasons}});
    }

    Deployment deployment;
    deployment.id = newId();
    deployment.ownerId = request.ownerId;
    deployment.assignments = request.assignments;
    for (const auto& text : request.slos) {
        deployment.slos.push_back(parseSlo(text, mOptions.evaluationIntervalMs));
    }
    deployment.alerting = request.alerting;
    deployment.credentialsRef = "cred-" + deployment.id;
    TimestampMs now = nowMs();
    deployment.transitions.push_back({DeploymentStatus::New, now});
    deployment.apply(LifecycleEvent::ValidateOk, now);
    mStore.putDeployment(deployment);

    std::set<ResourceId> ids;
    for (const auto& assignment : deployment.assignments) {
        ids.insert(assignment.resourceId);
    }
    try {
        mStore.reserveResources(deployment.id, ids);
    } catch (...) {
        mStore.deleteDeployment(deployment.id);
        throw;
    }

    nlohmann::json credentials = nlohmann::json::object();
    for (const auto& [platform, value] : request.credentials) {
        credentials[std::string(toString(platform))] = value;
    }
    mStore.putCredentials(deployment.credentialsRef, credentials);

    publishStatus(mStore.getDeployment(deployment.id));
    runJob([this, id = deployment.id] { provision(id); });
    return deployment.id;
}

void DeploymentEngine::provision(const DeploymentId& id)
{
    Deployment deployment = mStore.getDeployment(id);
    const std::size_t count = deployment.assignments.size();
    std::vector<std::string> handleIds(count);
    std::vector<Platform> platforms(count);

    auto errors = fanOut(count, [&](std::size_t i) {
        const auto& assignment = deployment.assignments[i];
        ResourceRecord resource = mStore.getResource(assignment.resourceId);
        platforms[i] = resource.platform;
        const Artifact* artifact = mCatalog.findArtifact(assignment.artifactRef);
        if (!artifact) {
            throw Error(ErrorCode::NotFound, "unknown artifact " + assignment.artifactRef);
        }
        auto& driver = mSimulator.driver(resource.platform);
        if (!artifact->imageRef.empty()) {
            driver.prePull(resource, artifact->imageRef, artifact->behavior.imagePullMs);
        }
        handleIds[i] = driver.deploy(resource, *artifact, credentialFor(deployment, resource.platform), id).handleId;
    });

    std::vector<std::string> failures;
    for (const auto& error : errors) {
        if (error) {
            failures.push_back(describe(error));
        }
    }

    if (failures.empty()) {
        mStore.markDeployed(id);
        auto ready = mStore.updateDeployment(id, [&](Deployment& d) {
            d.handles = handleIds;
            d.apply(LifecycleEvent::AllReady, nowMs());
        });
        publishStatus(ready);
        return;
    }

    spdlog::warn("engine: deployment {} failed: {}", id, failures.front());
    fanOut(count, [&](std::size_t i) {
        if (!handleIds[i].empty()) {
            mSimulator.driver(platforms[i]).terminate(handleIds[i]);
        }
    });
    mStore.releaseResources(id);
    auto failed = mStore.updateDeployment(id, [&](Deployment& d) {
        d.handles.clear();
        d.apply(LifecycleEvent::Failure, nowMs());
    });
    publishStatus(failed);
}

void DeploymentEngine::terminateDeployment(const DeploymentId& id)
{
    std::lock_guard command(mCommandMutex);
    auto updated = mStore.updateDeployment(id, [](Deployment& d) {
        if (!d.pendingOp.empty()) {
            throw Error(ErrorCode::IllegalTransition, "deployment has a " + d.pendingOp + " in progress",
                {{"current", toString(d.status)}, {"event", "terminate"}});
        }
        d.apply(LifecycleEvent::Terminate, nowMs());
    });
    publishStatus(updated);
    runJob([this, id] { finishTermination(id); });
}

void DeploymentEngine::finishTermination(const DeploymentId& id)
{
    Deployment deployment = mStore.getDeployment(id);
    auto refs = handleRefs(deployment);
    auto errors = fanOut(refs.size(), [&](std::size_t i) {
        try {
            mSimulator.driver(refs[i].platform).terminate(refs[i].handleId);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::UnknownHandle) {
                throw;
            }
        }
    });
    for (const auto& error : errors) {
        if (error) {
            spdlog::warn("engine: terminate of {} reported: {}", id, describe(error));
        }
    }
    mStore.releaseResources(id);
    auto done = mStore.updateDeployment(id, [](Deployment& d) {
        d.handles.clear();
        d.apply(LifecycleEvent::AllTerminated, nowMs());
    });
    publishStatus(done);
}

void DeploymentEngine::startup(const DeploymentId& id)
{
    std::lock_guard command(mCommandMutex);
    mStore.updateDeployment(id, [](Deployment& d) {
        if (!d.pendingOp.empty() || !tryNextState(d.status, LifecycleEvent::Start)) {
            throw Error(ErrorCode::IllegalTransition, "startup requires a STOPPED deployment",
                {{"current", toString(d.status)}, {"event", "start"}});
        }
        d.pendingOp = "startup";
    });
    runJob([this, id] { runStartStop(id, true); });
}

void DeploymentEngine::shutdown(const DeploymentId& id)
{
    std::lock_guard command(mCommandMutex);
    mStore.updateDeployment(id, [](Deployment& d) {
        if (!d.pendingOp.empty() || !tryNextState(d.status, LifecycleEvent::Stop)) {
            throw Error(ErrorCode::IllegalTransition, "shutdown requires a READY deployment",
                {{"current", toString(d.status)}, {"event", "stop"}});
        }
        d.pendingOp = "shutdown";
    });
    runJob([this, id] { runStartStop(id, false); });
}

void DeploymentEngine::runStartStop(const DeploymentId& id, bool start)
{
    Deployment deployment = mStore.getDeployment(id);
    auto refs = handleRefs(deployment);
    double started = steadyMs();
    auto errors = fanOut(refs.size(), [&](std::size_t i) {
        auto& driver = mSimulator.driver(refs[i].platform);
        if (start) {
            driver.startup(refs[i].handleId);
        } else {
            driver.shutdown(refs[i].handleId);
        }
    });
    double elapsed = steadyMs() - started;

    std::string failure;
    for (const auto& error : errors) {
        if (error) {
            failure = describe(error);
            break;
        }
    }
    auto updated = mStore.updateDeployment(id, [&](Deployment& d) {
        d.pendingOp.clear();
        if (!failure.empty()) {
            d.apply(LifecycleEvent::Failure, nowMs());
            return;
        }
        if (start) {
            d.startupTimeMs = elapsed;
            d.apply(LifecycleEvent::Start, nowMs());
        } else {
            d.shutdownTimeMs = elapsed;
            d.apply(LifecycleEvent::Stop, nowMs());
        }
    });
    if (!failure.empty()) {
        spdlog::warn("engine: {} of {} failed: {}", start ? "startup" : "shutdown", id, failure);
    }
    publishStatus(updated);
}

InvokeResult DeploymentEngine::invoke(const DeploymentId& id, const std::string& artifactRef,
    const nlohmann::json& payload, const std::optional<ResourceId>& resourceId, std::optional<double> arrivalMs)
{
    Deployment deployment = mStore.getDeployment(id);
    if (deployment.status != DeploymentStatus::Ready) {
        throw Error(ErrorCode::NotRunning, "deployment " + id + " is " + std::string(toString(deployment.status)),
            {{"id", id}, {"status", toString(deployment.status)}});
    }
    for (const auto& ref : handleRefs(deployment)) {
        if (!artifactRef.empty() && ref.artifactRef != artifactRef) {
            continue;
        }
        if (resourceId && ref.resourceId != *resourceId) {
            continue;
        }
        return mSimulator.driver(ref.platform).invoke(ref.handleId, payload, arrivalMs);
    }
    throw Error(ErrorCode::NotFound, "deployment " + id + " runs no artifact '" + artifactRef + "'",
        {{"id", id}, {"artifact", artifactRef}});
}

std::map<ResourceId, double> DeploymentEngine::probeByResource(const Deployment& deployment)
{
    std::map<ResourceId, double> result;
    const nlohmann::json payload = {{"probe", true}};
    for (const auto& ref : handleRefs(deployment)) {
        try {
            auto rtt = mSimulator.driver(ref.platform).invoke(ref.handleId, payload, std::nullopt).rttMs;
            auto [it, inserted] = result.emplace(ref.resourceId, rtt);
            if (!inserted) {
                it->second = std::max(it->second, rtt);
            }
        } catch (const Error& e) {
            spdlog::debug("engine: probe of {} on {} failed: {}", deployment.id, ref.resourceId, e.what());
        }
    }
    return result;
}

std::optional<double> DeploymentEngine::probeLatency(const Deployment& deployment)
{
    auto perResource = probeByResource(deployment);
    if (perResource.empty()) {
        return std::nullopt;
    }
    double worst = 0.0;
    for (const auto& [rid, rtt] : perResource) {
        worst = std::max(worst, rtt);
    }
    return worst;
}

void DeploymentEngine::reassign(const DeploymentId& id, const ResourceId& from, const ResourceId& to)
{
    std::lock_guard command(mCommandMutex);
    Deployment deployment = mStore.getDeployment(id);
    if (deployment.status != DeploymentStatus::Ready || !deployment.pendingOp.empty()) {
        throw Error(ErrorCode::IllegalTransition, "only READY deployments can be reassigned",
            {{"current", toString(deployment.status)}, {"event", "reassign"}});
    }
    std::size_t index = deployment.assignments.size();
    for (std::size_t i = 0; i < deployment.assignments.size(); ++i) {
        if (deployment.assignments[i].resourceId == from) {
            index = i;
        }
    }
    if (index == deployment.assignments.size()) {
        throw Error(ErrorCode::NotFound, "deployment " + id + " does not use resource " + from, {{"resource", from}});
    }
    ResourceRecord oldResource = mStore.getResource(from);
    ResourceRecord newResource = mStore.getResource(to);
    if (oldResource.platform != newResource.platform) {
        throw Error(ErrorCode::InvalidArgument, "reassignment must keep the platform", {{"from", from}, {"to", to}});
    }
    const Artifact* artifact = mCatalog.findArtifact(deployment.assignments[index].artifactRef);
    if (!artifact) {
        throw Error(ErrorCode::NotFound, "unknown artifact " + deployment.assignments[index].artifactRef);
    }
    auto& driver = mSimulator.driver(oldResource.platform);
    std::string credentials = credentialFor(deployment, oldResource.platform);

    if (index < deployment.handles.size() && !deployment.handles[index].empty()) {
        try {
            driver.terminate(deployment.handles[index]);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::UnknownHandle) {
                throw;
            }
        }
    }

    ResourceRecord target = newResource;
    try {
        mStore.swapResource(id, from, to);
    } catch (...) {
        target = oldResource;
    }

    std::string handleId;
    try {
        if (!artifact->imageRef.empty()) {
            driver.prePull(target, artifact->imageRef, artifact->behavior.imagePullMs);
        }
        handleId = driver.deploy(target, *artifact, credentials, id).handleId;
    } catch (const std::exception& e) {
        spdlog::warn("engine: redeploy of {} on {} failed: {}", id, target.id, e.what());
        for (const auto& ref : handleRefs(mStore.getDeployment(id))) {
            if (ref.resourceId != from && ref.resourceId != to) {
                try {
                    mSimulator.driver(ref.platform).terminate(ref.handleId);
                } catch (const Error&) {
                }
            }
        }
        mStore.releaseResources(id);
        auto failed = mStore.updateDeployment(id, [](Deployment& d) {
            d.handles.clear();
            d.apply(LifecycleEvent::Failure, nowMs());
        });
        publishStatus(failed);
        throw;
    }

    mStore.markDeployed(id);
    mStore.updateDeployment(id, [&](Deployment& d) {
        if (index < d.handles.size()) {
            d.handles[index] = handleId;
        }
    });
    if (target.id != to) {
        throw Error(ErrorCode::ResourceConflict, "resource " + to + " was taken; workload restored on " + from,
            {{"ids", {to}}});
    }
    spdlog::info("engine: deployment {} moved from {} to {}", id, from, to);
}

std::vector<DeploymentHandle> DeploymentEngine::handles(const DeploymentId& id) const
{
    std::vector<DeploymentHandle> result;
    for (const auto& ref : handleRefs(mStore.getDeployment(id))) {
        try {
            result.push_back(mSimulator.driver(ref.platform).handle(ref.handleId));
        } catch (const Error&) {
        }
    }
    return result;
}

void DeploymentEngine::bind()
{
    auto idOf = [](const BusMessage& m) {
        if (!m.body.contains("id") || !m.body.at("id").is_string()) {
            throw Error(ErrorCode::InvalidArgument, "message needs an id");
        }
        return m.body.at("id").get<std::string>();
    };

    mSubscriptions.push_back(mBus.subscribe("deployment.create", [this](const BusMessage& m) {
        auto request = DeploymentRequest::fromJson(m.body.value("request", nlohmann::json::object()),
            m.body.value("ownerId", std::string()));
        return nlohmann::json {{"id", createDeployment(request)}};
    }));
    mSubscriptions.push_back(mBus.subscribe("deployment.terminate", [this, idOf](const BusMessage& m) {
        terminateDeployment(idOf(m));
        return nlohmann::json::object();
    }));
    mSubscriptions.push_back(mBus.subscribe("deployment.startup", [this, idOf](const BusMessage& m) {
        startup(idOf(m));
        return nlohmann::json::object();
    }));
    mSubscriptions.push_back(mBus.subscribe("deployment.shutdown", [this, idOf](const BusMessage& m) {
        shutdown(idOf(m));
        return nlohmann::json::object();
    }));
    mSubscriptions.push_back(mBus.subscribe("deployment.get", [this, idOf](const BusMessage& m) {
        return nlohmann::json(mStore.getDeployment(idOf(m)));
    }));
    mSubscriptions.push_back(mBus.subscribe("deployment.list", [this](const BusMessage&) {
        return nlohmann::json(mStore.listDeployments());
    }));
    mSubscriptions.push_back(mBus.subscribe("deployment.invoke", [this, idOf](const BusMessage& m) {
        std::optional<ResourceId> resource;
        if (m.body.contains("resourceId") && m.body.at("resourceId").is_string()) {
            resource = m.body.at("resourceId").get<std::string>();
        }
        std::optional<double> arrival;
        if (m.body.contains("arrivalMs") && m.body.at("arrivalMs").is_number()) {
            arrival = m.body.at("arrivalMs").get<double>();
        }
        auto result = invoke(idOf(m), m.body.value("artifact", std::string()),
            m.body.value("payload", nlohmann::json::object()), resource, arrival);
        return nlohmann::json {{"response", result.response}, {"rttMs", result.rttMs}, {"networkMs", result.networkMs},
            {"queueMs", result.queueMs}, {"serviceMs", result.serviceMs}};
    }));
}

} // namespace rm
