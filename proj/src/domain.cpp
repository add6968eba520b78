/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/domain.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <utility>

namespace rm {

namespace {

template <typename Enum, std::size_t N>
Enum fromName(const std::array<std::pair<Enum, std::string_view>, N>& table, std::string_view name,
    std::string_view what)
{
    for (const auto& [value, text] : table) {
        if (text == name) {
            return value;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown " + std::string(what) + " '" + std::string(name) + "'");
}

template <typename Enum, std::size_t N>
std::string_view toName(const std::array<std::pair<Enum, std::string_view>, N>& table, Enum value)
{
    for (const auto& [v, text] : table) {
        if (v == value) {
            return text;
        }
    }
    return "?";
}

constexpr std::array<std::pair<ErrorCode, std::string_view>, 26> cErrorNames {{
    {ErrorCode::IllegalTransition, "IllegalTransition"},
    {ErrorCode::ParseError, "ParseError"},
    {ErrorCode::MigrationFailed, "MigrationFailed"},
    {ErrorCode::ResourceConflict, "ResourceConflict"},
    {ErrorCode::NotFound, "NotFound"},
    {ErrorCode::InvalidArgument, "InvalidArgument"},
    {ErrorCode::QueueFull, "QueueFull"},
    {ErrorCode::Timeout, "Timeout"},
    {ErrorCode::NoHandler, "NoHandler"},
    {ErrorCode::InvalidCredentials, "InvalidCredentials"},
    {ErrorCode::IncompatibleArtifact, "IncompatibleArtifact"},
    {ErrorCode::ProviderUnreachable, "ProviderUnreachable"},
    {ErrorCode::UnknownHandle, "UnknownHandle"},
    {ErrorCode::NotRunning, "NotRunning"},
    {ErrorCode::QueueTimeout, "QueueTimeout"},
    {ErrorCode::LineParseError, "LineParseError"},
    {ErrorCode::UnknownAggregator, "UnknownAggregator"},
    {ErrorCode::DeliveryFailed, "DeliveryFailed"},
    {ErrorCode::NoCandidate, "NoCandidate"},
    {ErrorCode::MissingGroundTruth, "MissingGroundTruth"},
    {ErrorCode::ConfigError, "ConfigError"},
    {ErrorCode::StartupFailed, "StartupFailed"},
    {ErrorCode::ValidationFailed, "ValidationFailed"},
    {ErrorCode::Unauthorized, "Unauthorized"},
    {ErrorCode::StoreError, "StoreError"},
    {ErrorCode::Internal, "Internal"},
}};

constexpr std::array<std::pair<Platform, std::string_view>, 4> cPlatformNames {{
    {Platform::FaasEdge, "FAAS_EDGE"},
    {Platform::Serverless, "SERVERLESS"},
    {Platform::Container, "CONTAINER"},
    {Platform::Vm, "VM"},
}};

constexpr std::array<std::pair<ResourceState, std::string_view>, 4> cResourceStateNames {{
    {ResourceState::Available, "AVAILABLE"},
    {ResourceState::Reserved, "RESERVED"},
    {ResourceState::Deployed, "DEPLOYED"},
    {ResourceState::Unreachable, "UNREACHABLE"},
}};

constexpr std::array<std::pair<ArtifactKind, std::string_view>, 2> cArtifactKindNames {{
    {ArtifactKind::Function, "FUNCTION"},
    {ArtifactKind::ContainerService, "CONTAINER_SERVICE"},
}};

constexpr std::array<std::pair<Comparator, std::string_view>, 5> cComparatorNames {{
    {Comparator::LT, "LT"},
    {Comparator::LE, "LE"},
    {Comparator::GT, "GT"},
    {Comparator::GE, "GE"},
    {Comparator::EQ, "EQ"},
}};

constexpr std::array<std::pair<Comparator, std::string_view>, 5> cComparatorSymbols {{
    {Comparator::LT, "<"},
    {Comparator::LE, "<="},
    {Comparator::GT, ">"},
    {Comparator::GE, ">="},
    {Comparator::EQ, "=="},
}};

constexpr std::array<std::pair<DeploymentStatus, std::string_view>, 8> cStatusNames {{
    {DeploymentStatus::New, "NEW"},
    {DeploymentStatus::Validating, "VALIDATING"},
    {DeploymentStatus::Deploying, "DEPLOYING"},
    {DeploymentStatus::Ready, "READY"},
    {DeploymentStatus::Stopped, "STOPPED"},
    {DeploymentStatus::Terminating, "TERMINATING"},
    {DeploymentStatus::Terminated, "TERMINATED"},
    {DeploymentStatus::Error, "ERROR"},
}};

constexpr std::array<std::pair<LifecycleEvent, std::string_view>, 8> cEventNames {{
    {LifecycleEvent::ValidateOk, "validateOk"},
    {LifecycleEvent::ResourcesReserved, "resourcesReserved"},
    {LifecycleEvent::AllReady, "allReady"},
    {LifecycleEvent::Stop, "stop"},
    {LifecycleEvent::Start, "start"},
    {LifecycleEvent::Terminate, "terminate"},
    {LifecycleEvent::AllTerminated, "allTerminated"},
    {LifecycleEvent::Failure, "failure"},
}};

std::string shortestDouble(double value)
{
    std::array<char, 64> buffer {};
    auto [end, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
    return std::string(buffer.data(), end);
}

bool hasWhitespace(std::string_view text)
{
    return std::any_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
}

} // namespace

std::string_view toString(ErrorCode code)
{
    return toName(cErrorNames, code);
}

ErrorCode errorCodeFromString(std::string_view name)
{
    for (const auto& [value, text] : cErrorNames) {
        if (text == name) {
            return value;
        }
    }
    return ErrorCode::Internal;
}

std::string_view toString(Platform platform)
{
    return toName(cPlatformNames, platform);
}

Platform platformFromString(std::string_view name)
{
    return fromName(cPlatformNames, name, "platform");
}

std::string_view toString(ResourceState state)
{
    return toName(cResourceStateNames, state);
}

ResourceState resourceStateFromString(std::string_view name)
{
    return fromName(cResourceStateNames, name, "resource state");
}

bool isAllowedResourceTransition(ResourceState from, ResourceState to)
{
    using S = ResourceState;

    if (to == S::Unreachable) {
        return from != S::Unreachable;
    }

    switch (from) {
    case S::Available:
        return to == S::Reserved;
    case S::Reserved:
        return to == S::Deployed || to == S::Available;
    case S::Deployed:
        return to == S::Available;
    case S::Unreachable:
        return to == S::Available;
    }

    return false;
}

void ResourceRecord::validate() const
{
    if (id.empty()) {
        throw Error(ErrorCode::InvalidArgument, "resource id must not be empty");
    }
    if (cpuCores < 1) {
        throw Error(ErrorCode::InvalidArgument, "cpuCores must be >= 1", {{"resource", id}});
    }
    if (!(memoryGb > 0) || !(storageGb > 0)) {
        throw Error(ErrorCode::InvalidArgument, "memoryGb and storageGb must be > 0", {{"resource", id}});
    }
    if (!(costPerHour >= 0) || !std::isfinite(costPerHour)) {
        throw Error(ErrorCode::InvalidArgument, "costPerHour must be >= 0", {{"resource", id}});
    }
    bool owned = state == ResourceState::Reserved || state == ResourceState::Deployed;
    if (owned != deploymentId.has_value()) {
        throw Error(ErrorCode::InvalidArgument, "reserved or deployed resources reference exactly one deployment",
            {{"resource", id}});
    }
}

std::string_view toString(ArtifactKind kind)
{
    return toName(cArtifactKindNames, kind);
}

ArtifactKind artifactKindFromString(std::string_view name)
{
    return fromName(cArtifactKindNames, name, "artifact kind");
}

bool isCompatible(ArtifactKind kind, Platform platform)
{
    if (kind == ArtifactKind::ContainerService) {
        return platform == Platform::Container;
    }
    return platform != Platform::Container;
}

std::string_view toString(Comparator comparator)
{
    return toName(cComparatorNames, comparator);
}

std::string_view toSymbol(Comparator comparator)
{
    return toName(cComparatorSymbols, comparator);
}

Comparator comparatorFromString(std::string_view name)
{
    return fromName(cComparatorNames, name, "comparator");
}

bool satisfies(double value, Comparator comparator, double threshold)
{
    switch (comparator) {
    case Comparator::LT:
        return value < threshold;
    case Comparator::LE:
        return value <= threshold;
    case Comparator::GT:
        return value > threshold;
    case Comparator::GE:
        return value >= threshold;
    case Comparator::EQ:
        return value == threshold;
    }
    return false;
}

void ServiceLevelObjective::validate() const
{
    if (metric.empty() || hasWhitespace(metric)) {
        throw Error(ErrorCode::InvalidArgument, "SLO metric must be a non-empty token");
    }
    if (!std::isfinite(threshold)) {
        throw Error(ErrorCode::InvalidArgument, "SLO threshold must be finite");
    }
    if (evaluationIntervalMs < cMinEvaluationIntervalMs) {
        throw Error(ErrorCode::InvalidArgument, "evaluationIntervalMs must be >= 100");
    }
}

ServiceLevelObjective parseSlo(std::string_view text, std::int64_t evaluationIntervalMs)
{
    auto parseError = [&](std::string_view token, const std::string& why) {
        return Error(ErrorCode::ParseError, why + ": '" + std::string(token) + "'", {{"token", std::string(token)}});
    };

    std::vector<std::string_view> tokens;
    std::size_t pos = 0;
    while (pos < text.size()) {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) {
            ++pos;
        }
        std::size_t start = pos;
        while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos]))) {
            ++pos;
        }
        if (pos > start) {
            tokens.push_back(text.substr(start, pos - start));
        }
    }

    // "<number> <unit>" is accepted as well as "<number><unit>".
    if (tokens.size() == 4 && (tokens[3] == "ms" || tokens[3] == "s")) {
        // handled below
    } else if (tokens.size() != 3) {
        throw parseError(text, "expected '<metric> <op> <number>[unit]'");
    }

    ServiceLevelObjective slo;
    slo.evaluationIntervalMs = evaluationIntervalMs;

    std::string_view metric = tokens[0];
    for (unsigned char c : metric) {
        if (!std::isalnum(c) && c != '_' && c != '.' && c != '-') {
            throw parseError(metric, "invalid metric name");
        }
    }
    slo.metric = std::string(metric);

    std::string_view op = tokens[1];
    bool matched = false;
    for (const auto& [value, symbol] : cComparatorSymbols) {
        if (symbol == op) {
            slo.comparator = value;
            matched = true;
        }
    }
    if (!matched) {
        throw parseError(op, "unknown operator");
    }

    std::string_view number = tokens[2];
    std::string_view unit = tokens.size() == 4 ? tokens[3] : std::string_view {};
    if (unit.empty()) {
        if (number.ends_with("ms")) {
            unit = "ms";
            number.remove_suffix(2);
        } else if (number.ends_with("s")) {
            unit = "s";
            number.remove_suffix(1);
        } else {
            unit = "ms";
        }
    }
    if (!number.empty() && number.front() == '+') {
        number.remove_prefix(1);
    }

    double value = 0.0;
    auto [end, ec] = std::from_chars(number.data(), number.data() + number.size(), value);
    if (number.empty() || ec != std::errc() || end != number.data() + number.size() || !std::isfinite(value)) {
        throw parseError(tokens[2], "invalid threshold");
    }

    slo.threshold = unit == "s" ? value * 1000.0 : value;
    slo.validate();
    return slo;
}

std::string formatSlo(const ServiceLevelObjective& slo)
{
    return slo.metric + " " + std::string(toSymbol(slo.comparator)) + " " + shortestDouble(slo.threshold) + "ms";
}

std::string_view toString(DeploymentStatus status)
{
    return toName(cStatusNames, status);
}

DeploymentStatus deploymentStatusFromString(std::string_view name)
{
    return fromName(cStatusNames, name, "deployment status");
}

std::string_view toString(LifecycleEvent event)
{
    return toName(cEventNames, event);
}

bool isTerminal(DeploymentStatus status)
{
    return status == DeploymentStatus::Terminated;
}

std::optional<DeploymentStatus> tryNextState(DeploymentStatus current, LifecycleEvent event)
{
    using S = DeploymentStatus;
    using E = LifecycleEvent;

    if (event == E::Failure) {
        if (current == S::Terminated || current == S::Error) {
            return std::nullopt;
        }
        return S::Error;
    }

    switch (current) {
    case S::New:
        if (event == E::ValidateOk) {
            return S::Validating;
        }
        break;
    case S::Validating:
        if (event == E::ResourcesReserved) {
            return S::Deploying;
        }
        break;
    case S::Deploying:
        if (event == E::AllReady) {
            return S::Ready;
        }
        break;
    case S::Ready:
        if (event == E::Stop) {
            return S::Stopped;
        }
        if (event == E::Terminate) {
            return S::Terminating;
        }
        break;
    case S::Stopped:
        if (event == E::Start) {
            return S::Ready;
        }
        if (event == E::Terminate) {
            return S::Terminating;
        }
        break;
    case S::Error:
        // Failed deployments are cleaned up through the normal termination path.
        if (event == E::Terminate) {
            return S::Terminating;
        }
        break;
    case S::Terminating:
        if (event == E::AllTerminated) {
            return S::Terminated;
        }
        break;
    case S::Terminated:
        break;
    }

    return std::nullopt;
}

DeploymentStatus nextState(DeploymentStatus current, LifecycleEvent event)
{
    if (auto next = tryNextState(current, event)) {
        return *next;
    }
    throw Error(ErrorCode::IllegalTransition,
        "illegal transition " + std::string(toString(current)) + " --" + std::string(toString(event)) + "-->",
        {{"current", toString(current)}, {"event", toString(event)}});
}

std::optional<TimestampMs> Deployment::transitionTime(DeploymentStatus target) const
{
    for (const auto& transition : transitions) {
        if (transition.status == target) {
            return transition.atMs;
        }
    }
    return std::nullopt;
}

std::optional<double> Deployment::deploymentTimeMs() const
{
    auto from = transitionTime(DeploymentStatus::Deploying);
    auto to = transitionTime(DeploymentStatus::Ready);
    if (!from || !to) {
        return std::nullopt;
    }
    return static_cast<double>(*to - *from);
}

std::optional<double> Deployment::terminationTimeMs() const
{
    auto from = transitionTime(DeploymentStatus::Terminating);
    auto to = transitionTime(DeploymentStatus::Terminated);
    if (!from || !to) {
        return std::nullopt;
    }
    return static_cast<double>(*to - *from);
}

void Deployment::apply(LifecycleEvent event, TimestampMs atMs)
{
    status = nextState(status, event);
    if (!transitions.empty()) {
        atMs = std::max(atMs, transitions.back().atMs);
    }
    transitions.push_back({status, atMs});
}

std::vector<ResourceId> Deployment::resourceIds() const
{
    std::vector<ResourceId> ids;
    for (const auto& assignment : assignments) {
        if (std::find(ids.begin(), ids.end(), assignment.resourceId) == ids.end()) {
            ids.push_back(assignment.resourceId);
        }
    }
    return ids;
}

std::string MetricSample::invalidReason() const
{
    if (metric.empty()) {
        return "empty metric name";
    }
    if (hasWhitespace(metric)) {
        return "metric name contains whitespace";
    }
    if (timestampMs <= 0) {
        return "timestamp must be positive";
    }
    for (const auto& [key, value] : tags) {
        if (key.empty() || value.empty()) {
            return "empty tag key or value";
        }
        if (hasWhitespace(key) || hasWhitespace(value) || key.find('=') != std::string::npos
            || value.find('=') != std::string::npos) {
            return "tag contains whitespace or '='";
        }
    }
    return {};
}

std::string AlertNotification::toWireJson() const
{
    nlohmann::ordered_json body;
    body["deploymentId"] = deploymentId;
    body["sloIndex"] = sloIndex;
    body["metric"] = metric;
    if (std::isfinite(observedValue)) {
        body["observedValue"] = observedValue;
    } else {
        body["observedValue"] = nullptr;
    }
    body["threshold"] = threshold;
    body["comparator"] = toString(comparator);
    body["timestampMs"] = timestampMs;
    body["episodeId"] = episodeId;
    return body.dump();
}

/*
 * JSON conversions.
 */

void to_json(nlohmann::json& j, const ResourceRecord& r)
{
    j = nlohmann::json {{"id", r.id}, {"platform", toString(r.platform)}, {"region", r.region},
        {"cpuCores", r.cpuCores}, {"memoryGb", r.memoryGb}, {"storageGb", r.storageGb},
        {"costPerHour", r.costPerHour}, {"state", toString(r.state)}};
    if (r.metricsEndpoint) {
        j["metricsEndpoint"] = *r.metricsEndpoint;
    }
    if (r.deploymentId) {
        j["deploymentId"] = *r.deploymentId;
    }
}

void from_json(const nlohmann::json& j, ResourceRecord& r)
{
    r.id = j.at("id").get<std::string>();
    r.platform = platformFromString(j.at("platform").get<std::string>());
    r.region = j.at("region").get<std::string>();
    r.cpuCores = j.at("cpuCores").get<int>();
    r.memoryGb = j.at("memoryGb").get<double>();
    r.storageGb = j.at("storageGb").get<double>();
    r.costPerHour = j.value("costPerHour", 0.0);
    r.state = resourceStateFromString(j.value("state", std::string("AVAILABLE")));
    r.metricsEndpoint.reset();
    if (j.contains("metricsEndpoint") && !j["metricsEndpoint"].is_null()) {
        r.metricsEndpoint = j["metricsEndpoint"].get<std::string>();
    }
    r.deploymentId.reset();
    if (j.contains("deploymentId") && !j["deploymentId"].is_null()) {
        r.deploymentId = j["deploymentId"].get<std::string>();
    }
}

void to_json(nlohmann::json& j, const Artifact& a)
{
    j = nlohmann::json {{"name", a.name}, {"kind", toString(a.kind)}, {"imageRef", a.imageRef},
        {"behavior", {{"sleepMs", a.behavior.sleepMs}, {"imagePullMs", a.behavior.imagePullMs}}}};
}

void from_json(const nlohmann::json& j, Artifact& a)
{
    a.name = j.at("name").get<std::string>();
    a.kind = artifactKindFromString(j.at("kind").get<std::string>());
    a.imageRef = j.value("imageRef", std::string());
    a.behavior = {};
    if (j.contains("behavior")) {
        const auto& behavior = j["behavior"];
        a.behavior.sleepMs = behavior.value("sleepMs", std::int64_t {0});
        a.behavior.imagePullMs = behavior.value("imagePullMs", std::int64_t {0});
    }
    if (a.behavior.sleepMs < 0 || a.behavior.imagePullMs < 0) {
        throw Error(ErrorCode::InvalidArgument, "artifact behavior times must be non-negative", {{"artifact", a.name}});
    }
}

void to_json(nlohmann::json& j, const ServiceLevelObjective& s)
{
    j = nlohmann::json {{"metric", s.metric}, {"comparator", toString(s.comparator)}, {"threshold", s.threshold},
        {"evaluationIntervalMs", s.evaluationIntervalMs}, {"text", formatSlo(s)}};
}

void from_json(const nlohmann::json& j, ServiceLevelObjective& s)
{
    if (j.is_string()) {
        s = parseSlo(j.get<std::string>());
        return;
    }
    if (j.contains("text") && !j.contains("metric")) {
        s = parseSlo(j["text"].get<std::string>(), j.value("evaluationIntervalMs", cDefaultEvaluationIntervalMs));
        return;
    }
    s.metric = j.at("metric").get<std::string>();
    s.comparator = comparatorFromString(j.at("comparator").get<std::string>());
    s.threshold = j.at("threshold").get<double>();
    s.evaluationIntervalMs = j.value("evaluationIntervalMs", cDefaultEvaluationIntervalMs);
    s.validate();
}

void to_json(nlohmann::json& j, const Deployment& d)
{
    j = nlohmann::json::object();
    j["id"] = d.id;
    j["ownerId"] = d.ownerId;
    j["assignments"] = nlohmann::json::array();
    for (const auto& a : d.assignments) {
        j["assignments"].push_back({{"resourceId", a.resourceId}, {"artifact", a.artifactRef}});
    }
    j["slos"] = d.slos;
    j["alerting"] = {{"enabled", d.alerting.enabled}, {"webhookUrl", d.alerting.webhookUrl}};
    j["status"] = toString(d.status);
    j["transitions"] = nlohmann::json::array();
    for (const auto& t : d.transitions) {
        j["transitions"].push_back({{"status", toString(t.status)}, {"atMs", t.atMs}});
    }
    j["credentialsRef"] = d.credentialsRef;
    j["handles"] = d.handles;
    if (d.startupTimeMs) {
        j["startupTimeMs"] = *d.startupTimeMs;
    }
    if (d.shutdownTimeMs) {
        j["shutdownTimeMs"] = *d.shutdownTimeMs;
    }
    if (!d.pendingOp.empty()) {
        j["pendingOp"] = d.pendingOp;
    }
    if (auto t = d.deploymentTimeMs()) {
        j["deploymentTimeMs"] = *t;
    }
    if (auto t = d.terminationTimeMs()) {
        j["terminationTimeMs"] = *t;
    }
}

void from_json(const nlohmann::json& j, Deployment& d)
{
    d = Deployment {};
    d.id = j.at("id").get<std::string>();
    d.ownerId = j.value("ownerId", std::string());
    for (const auto& a : j.at("assignments")) {
        d.assignments.push_back({a.at("resourceId").get<std::string>(), a.at("artifact").get<std::string>()});
    }
    if (j.contains("slos")) {
        d.slos = j["slos"].get<std::vector<ServiceLevelObjective>>();
    }
    if (j.contains("alerting")) {
        d.alerting.enabled = j["alerting"].value("enabled", false);
        d.alerting.webhookUrl = j["alerting"].value("webhookUrl", std::string());
    }
    d.status = deploymentStatusFromString(j.value("status", std::string("NEW")));
    if (j.contains("transitions")) {
        for (const auto& t : j["transitions"]) {
            d.transitions.push_back(
                {deploymentStatusFromString(t.at("status").get<std::string>()), t.at("atMs").get<TimestampMs>()});
        }
    }
    d.credentialsRef = j.value("credentialsRef", std::string());
    if (j.contains("handles")) {
        d.handles = j["handles"].get<std::vector<std::string>>();
    }
    if (j.contains("startupTimeMs")) {
        d.startupTimeMs = j["startupTimeMs"].get<double>();
    }
    if (j.contains("shutdownTimeMs")) {
        d.shutdownTimeMs = j["shutdownTimeMs"].get<double>();
    }
    d.pendingOp = j.value("pendingOp", std::string());
}

void to_json(nlohmann::json& j, const MetricSample& s)
{
    j = nlohmann::json {{"metric", s.metric}, {"timestampMs", s.timestampMs}, {"value", s.value}, {"tags", s.tags}};
}

void from_json(const nlohmann::json& j, MetricSample& s)
{
    s.metric = j.at("metric").get<std::string>();
    s.timestampMs = j.at("timestampMs").get<TimestampMs>();
    s.value = j.at("value").get<double>();
    s.tags = j.value("tags", TagMap {});
}

void to_json(nlohmann::json& j, const AlertNotification& a)
{
    j = nlohmann::json::parse(a.toWireJson());
}

} // namespace rm
