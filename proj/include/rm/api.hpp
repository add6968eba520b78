/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_API_HPP_
#define RM_API_HPP_

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include <rm/alerting.hpp>
#include <rm/auth.hpp>
#include <rm/collector.hpp>
#include <rm/engine.hpp>
#include <rm/event_bus.hpp>
#include <rm/provider_sim.hpp>
#include <rm/store.hpp>
#include <rm/tsdb.hpp>

namespace httplib {
class Server;
}

namespace rm {

struct UserSeed {
    std::string user;
    std::string password;
};

struct GlobalConfig {
    /// host:port; port 0 picks a free port.
    std::string listenAddress {"127.0.0.1:8080"};
    std::filesystem::path storePath {"data/store"};
    double timeScale {1.0};
    std::int64_t evaluationIntervalMs {cDefaultEvaluationIntervalMs};
    /// Empty selects the built-in reference testbed.
    std::filesystem::path testbedConfigPath;
    std::string authSecret;
    std::int64_t tokenTtlSeconds {3600};
    bool reallocationEnabled {false};
    std::int64_t requestTimeoutMs {10'000};
    std::size_t httpThreads {32};
    /// Users created (or reset) at boot.
    std::vector<UserSeed> users;

    /// Throws ConfigError naming the first invalid field.
    void validate() const;
};

/// Relative paths are resolved against `baseDir`.
GlobalConfig configFromJson(const nlohmann::json& document, const std::filesystem::path& baseDir = {});

/// Reads RM_CONFIG instead of `path` when set, then applies RM_TIME_SCALE.
GlobalConfig loadConfig(const std::filesystem::path& path);

/// Applies the RM_TIME_SCALE override, if present.
void applyEnvironment(GlobalConfig& config);

/*
 * HTTP routing, independent of the transport.
 */

struct HttpRequest {
    std::string method;
    std::string path;
    std::multimap<std::string, std::string> query;
    /// Lower-case header names.
    std::map<std::string, std::string> headers;
    std::string body;
};

struct HttpResponse {
    int status {200};
    std::string body;
    std::string contentType {"application/json"};
};

int httpStatusFor(ErrorCode code);

/**
 * Maps REST calls onto bus requests. Every route except /api/login,
 * /api/health and /api/spec needs `Authorization: Bearer <token>`.
 */
class ApiRouter {
public:
    ApiRouter(const Authenticator& auth, EventBus& bus, std::int64_t requestTimeoutMs);

    HttpResponse dispatch(const HttpRequest& request) const;

    /// Machine-readable route list served at GET /api/spec.
    static nlohmann::json describe();

private:
    nlohmann::json call(const std::string& address, nlohmann::json body) const;
    HttpResponse route(const HttpRequest& request, const std::vector<std::string>& segments,
        const std::string& subject) const;

    const Authenticator& mAuth;
    EventBus& mBus;
    std::int64_t mTimeoutMs;
};

/**
 * A booted system. Components start strictly in this order, and a failure at one
 * step leaves every later step unstarted:
 *   store.migrate, store, event-bus, metrics-tsdb, provider-drivers,
 *   deployment-engine, slo-alerting, rest-listener
 */
class System {
public:
    struct Overrides {
        /// Replaces the testbed named by the config.
        std::optional<Testbed> testbed;
        bool benchMode {false};
        /// Skips binding the REST listener (in-process use).
        bool withoutListener {false};
    };

    static std::unique_ptr<System> boot(const GlobalConfig& config);
    static std::unique_ptr<System> boot(const GlobalConfig& config, Overrides overrides);

    ~System();

    System(const System&) = delete;
    System& operator=(const System&) = delete;

    const GlobalConfig& config() const noexcept { return mConfig; }
    const std::vector<std::string>& startupOrder() const noexcept { return mStartupOrder; }

    Store& store() { return *mStore; }
    EventBus& bus() { return *mBus; }
    Tsdb& tsdb() { return *mTsdb; }
    ProviderSimulator& simulator() { return *mSimulator; }
    DeploymentEngine& engine() { return *mEngine; }
    Collector& collector() { return *mCollector; }
    AlertManager& alerting() { return *mAlerting; }
    Authenticator& auth() { return *mAuth; }
    ApiRouter& router() { return *mRouter; }
    const Testbed& testbed() const noexcept { return mTestbed; }

    /// Bound REST port, 0 without listener.
    int port() const noexcept { return mPort; }
    std::string baseUrl() const;

    /// Stops the listener and background loops; called by the destructor.
    void shutdown();

private:
    System() = default;
    void step(const std::string& component, const std::function<void()>& body);
    void bindResources();
    void bindMetrics();
    void bindAlerts();

    GlobalConfig mConfig;
    Testbed mTestbed;
    std::vector<std::string> mStartupOrder;

    std::unique_ptr<Store> mStore;
    std::unique_ptr<EventBus> mBus;
    std::unique_ptr<Tsdb> mTsdb;
    std::unique_ptr<ProviderSimulator> mSimulator;
    std::unique_ptr<DeploymentEngine> mEngine;
    std::unique_ptr<Collector> mCollector;
    std::unique_ptr<AlertManager> mAlerting;
    std::unique_ptr<Authenticator> mAuth;
    std::unique_ptr<ApiRouter> mRouter;
    std::unique_ptr<httplib::Server> mServer;
    std::thread mListener;
    int mPort {0};
    std::vector<EventBus::Subscription> mSubscriptions;
    bool mShutDown {false};
};

} // namespace rm

#endif
