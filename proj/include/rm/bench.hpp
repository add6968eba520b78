/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_BENCH_HPP_
#define RM_BENCH_HPP_

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include <rm/api.hpp>

namespace httplib {
class Client;
class Server;
}

namespace rm::bench {

struct ReportRow {
    std::string composition;
    int concurrency {1};
    std::string metric;
    double meanMs {0.0};
    double stddevMs {0.0};
    std::size_t n {0};
};

struct RawSample {
    std::string composition;
    int concurrency {1};
    std::string metric;
    int index {0};
    double valueMs {0.0};
};

struct ScenarioReport {
    std::string scenario;
    std::uint64_t seed {0};
    double timeScale {1.0};
    std::vector<ReportRow> rows;
    std::vector<RawSample> raw;
    std::vector<std::string> notes;

    const ReportRow* find(const std::string& composition, int concurrency, const std::string& metric) const;
    /// Mean of a row; throws NotFound when absent.
    double mean(const std::string& composition, int concurrency, const std::string& metric) const;
    /// Rebuilds `rows` from `raw` (mean, sample stddev, n) for every group.
    void summarize();
};

/// Writes summary.csv, raw.csv and report.txt into `directory`.
void writeReport(const ScenarioReport& report, const std::filesystem::path& directory);
std::string formatReport(const ScenarioReport& report);

/// Minimal JSON client of the REST API; safe to share between threads.
class RestClient {
public:
    struct Response {
        int status {0};
        nlohmann::json body;
    };

    explicit RestClient(std::string baseUrl);
    ~RestClient();

    void login(const std::string& user, const std::string& password);
    Response get(const std::string& path) const;
    Response post(const std::string& path, const nlohmann::json& body) const;
    Response del(const std::string& path) const;

private:
    Response send(const std::string& method, const std::string& path, const std::string* body) const;

    std::string mBaseUrl;
    std::string mToken;
    /// Idle keep-alive connections.
    mutable std::mutex mPoolMutex;
    mutable std::vector<std::unique_ptr<httplib::Client>> mIdle;
};

/// Embedded HTTP endpoint recording webhook POSTs with their receipt time.
class WebhookReceiver {
public:
    struct Received {
        double receivedAtMs {0.0};
        std::string body;
        nlohmann::json document;
    };

    WebhookReceiver();
    ~WebhookReceiver();

    std::string url() const;

    /// Status codes returned to the next requests, in order; 200 afterwards.
    void scriptResponses(std::vector<int> statuses);

    /// First delivery for `deploymentId` received after `afterMs` (steady clock) whose
    /// episode id is not in `skipEpisodes`; waits up to `timeoutMs`.
    std::optional<Received> waitFor(const std::string& deploymentId, double afterMs,
        const std::vector<std::string>& skipEpisodes, double timeoutMs);

    std::vector<Received> received() const;
    std::size_t requestCount() const;

private:
    std::unique_ptr<httplib::Server> mServer;
    std::thread mThread;
    int mPort {0};

    mutable std::mutex mMutex;
    std::condition_variable mCond;
    std::vector<Received> mReceived;
    std::deque<int> mScript;
    std::size_t mRequests {0};
};

struct HarnessConfig {
    std::uint64_t seed {42};
    double timeScale {0.01};
    /// Store directory owned by the harness; wiped at start.
    std::filesystem::path workDir {"bench-work"};
    /// Copies of every testbed resource, so concurrent deployments get disjoint sets.
    int replicas {4};
    /// Base configuration (evaluation interval, testbed path); defaults when absent.
    std::optional<GlobalConfig> base;
    /// Testbed to use instead of the configured one.
    std::optional<Testbed> testbed;
};

/// Boots a system in-process with its REST listener and an embedded webhook receiver.
class Harness {
public:
    explicit Harness(HarnessConfig config);
    ~Harness();

    System& system() { return *mSystem; }
    RestClient& client() { return *mClient; }
    WebhookReceiver& receiver() { return *mReceiver; }
    const HarnessConfig& config() const noexcept { return mConfig; }

    /// Unscaled evaluation interval of the booted system.
    std::int64_t evaluationIntervalMs() const { return mSystem->config().evaluationIntervalMs; }

    /// Credentials document accepted by every simulated platform.
    nlohmann::json credentials() const;

    /// Assignments of a named composition (faasEdge, container, serverless, vm, all)
    /// for the `instance`-th disjoint replica.
    std::vector<Assignment> composition(const std::string& name, int instance) const;

    /// Polls until the deployment reaches one of `statuses`; returns the document.
    nlohmann::json waitForStatus(
        const std::string& id, const std::vector<std::string>& statuses, double timeoutMs) const;

private:
    HarnessConfig mConfig;
    std::unique_ptr<WebhookReceiver> mReceiver;
    std::unique_ptr<System> mSystem;
    std::unique_ptr<RestClient> mClient;
};

struct Scenario1Options {
    std::vector<std::string> compositions {"faasEdge", "container", "serverless", "vm", "all"};
    std::vector<int> concurrency {1, 2, 4};
    int repetitions {3};
};

struct Scenario2Options {
    std::vector<int> deploymentCounts {1, 2, 3, 4};
    int injectionsPerDeployment {50};
    /// Unscaled latency added to the probed round trip while a violation is injected.
    double injectedLatencyMs {20'000.0};
    std::string slo {"latency < 10s"};
};

struct Scenario3Options {
    std::vector<int> concurrency {1, 4, 12, 48, 96, 192, 384};
    std::vector<std::string> targets {"serverless", "faasEdge", "vm"};
    /// Harness-side client workers issuing the invocations of one burst.
    std::size_t clientWorkers {16};
    /// Bursts are repeated until at least this many samples exist per level.
    std::size_t minSamples {48};
};

ScenarioReport runScenario1(Harness& harness, const Scenario1Options& options);
ScenarioReport runScenario2(Harness& harness, const Scenario2Options& options);
ScenarioReport runScenario3(Harness& harness, const Scenario3Options& options);

/// Process CPU time in milliseconds (user + system).
double processCpuMs();
/// Resident set size in megabytes.
double residentMb();

} // namespace rm::bench

#endif
