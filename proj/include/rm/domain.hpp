/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_DOMAIN_HPP_
#define RM_DOMAIN_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include <rm/error.hpp>
#include <rm/util.hpp>

namespace rm {

using ResourceId = std::string;
using DeploymentId = std::string;

/*
 * Resources.
 */

enum class Platform { FaasEdge, Serverless, Container, Vm };

inline constexpr Platform cAllPlatforms[] = {Platform::FaasEdge, Platform::Serverless, Platform::Container, Platform::Vm};

std::string_view toString(Platform platform);
Platform platformFromString(std::string_view name);

enum class ResourceState { Available, Reserved, Deployed, Unreachable };

std::string_view toString(ResourceState state);
ResourceState resourceStateFromString(std::string_view name);

/// Allowed edges: AVAILABLE->RESERVED->DEPLOYED->AVAILABLE, RESERVED->AVAILABLE (release
/// before provisioning finished), any->UNREACHABLE->AVAILABLE.
bool isAllowedResourceTransition(ResourceState from, ResourceState to);

struct ResourceRecord {
    ResourceId id;
    Platform platform {Platform::FaasEdge};
    std::string region;
    int cpuCores {1};
    double memoryGb {1.0};
    double storageGb {1.0};
    double costPerHour {0.0};
    ResourceState state {ResourceState::Available};
    std::optional<std::string> metricsEndpoint;
    /// Owning deployment while RESERVED or DEPLOYED.
    std::optional<DeploymentId> deploymentId;

    /// Throws InvalidArgument when a capacity or cost invariant does not hold.
    void validate() const;
};

/*
 * Artifacts.
 */

enum class ArtifactKind { Function, ContainerService };

std::string_view toString(ArtifactKind kind);
ArtifactKind artifactKindFromString(std::string_view name);

struct ArtifactBehavior {
    std::int64_t sleepMs {0};
    std::int64_t imagePullMs {0};
};

struct Artifact {
    std::string name;
    ArtifactKind kind {ArtifactKind::Function};
    ArtifactBehavior behavior;
    std::string imageRef;
};

/// Functions run on FAAS_EDGE, SERVERLESS and VM; container services only on CONTAINER.
bool isCompatible(ArtifactKind kind, Platform platform);

/*
 * Service level objectives.
 */

enum class Comparator { LT, LE, GT, GE, EQ };

std::string_view toString(Comparator comparator);
std::string_view toSymbol(Comparator comparator);
Comparator comparatorFromString(std::string_view name);

/// True when `value comparator threshold` holds.
bool satisfies(double value, Comparator comparator, double threshold);

inline constexpr std::int64_t cDefaultEvaluationIntervalMs = 5000;
inline constexpr std::int64_t cMinEvaluationIntervalMs = 100;

struct ServiceLevelObjective {
    std::string metric;
    Comparator comparator {Comparator::LT};
    /// Normalized to milliseconds.
    double threshold {0.0};
    std::int64_t evaluationIntervalMs {cDefaultEvaluationIntervalMs};

    void validate() const;

    bool operator==(const ServiceLevelObjective&) const = default;
};

/**
 * Parses `<metric> <op> <number>[unit]` where op is one of <, <=, >, >=, == and unit is
 * ms or s (ms when omitted). Throws ParseError naming the offending token.
 */
ServiceLevelObjective parseSlo(std::string_view text, std::int64_t evaluationIntervalMs = cDefaultEvaluationIntervalMs);

/// Canonical text form, always in milliseconds; parseSlo(formatSlo(x)) == x.
std::string formatSlo(const ServiceLevelObjective& slo);

/*
 * Deployment lifecycle.
 */

enum class DeploymentStatus { New, Validating, Deploying, Ready, Stopped, Terminating, Terminated, Error };

inline constexpr DeploymentStatus cAllStatuses[] = {DeploymentStatus::New, DeploymentStatus::Validating,
    DeploymentStatus::Deploying, DeploymentStatus::Ready, DeploymentStatus::Stopped, DeploymentStatus::Terminating,
    DeploymentStatus::Terminated, DeploymentStatus::Error};

std::string_view toString(DeploymentStatus status);
DeploymentStatus deploymentStatusFromString(std::string_view name);

enum class LifecycleEvent { ValidateOk, ResourcesReserved, AllReady, Stop, Start, Terminate, AllTerminated, Failure };

inline constexpr LifecycleEvent cAllEvents[] = {LifecycleEvent::ValidateOk, LifecycleEvent::ResourcesReserved,
    LifecycleEvent::AllReady, LifecycleEvent::Stop, LifecycleEvent::Start, LifecycleEvent::Terminate,
    LifecycleEvent::AllTerminated, LifecycleEvent::Failure};

std::string_view toString(LifecycleEvent event);

bool isTerminal(DeploymentStatus status);

/// Successor state for (current, event); returns nullopt for pairs outside the edge set.
std::optional<DeploymentStatus> tryNextState(DeploymentStatus current, LifecycleEvent event);

/// Same as tryNextState but throws IllegalTransition for undefined pairs.
DeploymentStatus nextState(DeploymentStatus current, LifecycleEvent event);

struct Assignment {
    ResourceId resourceId;
    std::string artifactRef;

    bool operator==(const Assignment&) const = default;
};

struct AlertingConfig {
    bool enabled {false};
    std::string webhookUrl;
};

struct Transition {
    DeploymentStatus status;
    TimestampMs atMs;
};

struct Deployment {
    DeploymentId id;
    std::string ownerId;
    std::vector<Assignment> assignments;
    std::vector<ServiceLevelObjective> slos;
    AlertingConfig alerting;
    DeploymentStatus status {DeploymentStatus::New};
    /// Full history in edge order; timestamps are monotone non-decreasing.
    std::vector<Transition> transitions;
    std::string credentialsRef;
    std::vector<std::string> handles;
    std::optional<double> startupTimeMs;
    std::optional<double> shutdownTimeMs;
    /// Non-empty while a background startup/shutdown is in flight.
    std::string pendingOp;

    /// First time the deployment entered `status`.
    std::optional<TimestampMs> transitionTime(DeploymentStatus status) const;

    /// t(READY) - t(DEPLOYING), once READY was reached.
    std::optional<double> deploymentTimeMs() const;

    /// t(TERMINATED) - t(TERMINATING), once TERMINATED was reached.
    std::optional<double> terminationTimeMs() const;

    /// Applies `event` through nextState and appends the transition.
    void apply(LifecycleEvent event, TimestampMs atMs);

    std::vector<ResourceId> resourceIds() const;
};

/*
 * Monitoring data.
 */

using TagMap = std::map<std::string, std::string>;

struct MetricSample {
    std::string metric;
    TimestampMs timestampMs {0};
    double value {0.0};
    TagMap tags;

    /// Empty string when valid, otherwise the first violated rule.
    std::string invalidReason() const;
    bool isValid() const { return invalidReason().empty(); }

    bool operator==(const MetricSample&) const = default;
};

struct AlertNotification {
    DeploymentId deploymentId;
    int sloIndex {0};
    std::string metric;
    /// NaN when the violation is missing data.
    double observedValue {0.0};
    double threshold {0.0};
    Comparator comparator {Comparator::LT};
    TimestampMs timestampMs {0};
    std::string episodeId;

    /// Webhook body, fields in wire order.
    std::string toWireJson() const;
};

/*
 * JSON conversions.
 */

void to_json(nlohmann::json& j, const ResourceRecord& r);
void from_json(const nlohmann::json& j, ResourceRecord& r);
void to_json(nlohmann::json& j, const Artifact& a);
void from_json(const nlohmann::json& j, Artifact& a);
void to_json(nlohmann::json& j, const ServiceLevelObjective& s);
void from_json(const nlohmann::json& j, ServiceLevelObjective& s);
void to_json(nlohmann::json& j, const Deployment& d);
void from_json(const nlohmann::json& j, Deployment& d);
void to_json(nlohmann::json& j, const MetricSample& s);
void from_json(const nlohmann::json& j, MetricSample& s);
void to_json(nlohmann::json& j, const AlertNotification& a);

} // namespace rm

#endif
