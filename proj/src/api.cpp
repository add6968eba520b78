/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/api.hpp>

#include <cstdlib>
#include <fstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace rm {

namespace {

Error configError(const std::string& field, const std::string& why)
{
    return Error(ErrorCode::ConfigError, field + ": " + why, {{"field", field}});
}

std::pair<std::string, int> splitListen(const std::string& address)
{
    auto colon = address.rfind(':');
    if (colon == std::string::npos || colon == 0) {
        throw configError("listenAddress", "expected host:port");
    }
    std::string host = address.substr(0, colon);
    int port = 0;
    try {
        std::size_t used = 0;
        port = std::stoi(address.substr(colon + 1), &used);
        if (used != address.size() - colon - 1) {
            throw std::invalid_argument("trailing");
        }
    } catch (const std::exception&) {
        throw configError("listenAddress", "port is not a number");
    }
    if (port < 0 || port > 65535) {
        throw configError("listenAddress", "port out of range");
    }
    return {host, port};
}

std::vector<std::string> splitPath(const std::string& path)
{
    std::vector<std::string> segments;
    std::size_t start = 0;
    while (start <= path.size()) {
        auto end = path.find('/', start);
        if (end == std::string::npos) {
            end = path.size();
        }
        if (end > start) {
            segments.push_back(path.substr(start, end - start));
        }
        start = end + 1;
    }
    return segments;
}

HttpResponse jsonResponse(int status, const nlohmann::json& body)
{
    return {status, body.dump(), "application/json"};
}

HttpResponse errorResponse(const Error& e)
{
    int status = httpStatusFor(e.code());
    nlohmann::json body = {{"error", toString(e.code())}};
    if (status == 500) {
        body["message"] = "internal error";
    } else {
        body["message"] = e.what();
        if (!e.details().is_null() && !e.details().empty()) {
            body["details"] = e.details();
        }
    }
    return jsonResponse(status, body);
}

nlohmann::json parseBody(const std::string& body)
{
    if (body.empty()) {
        return nlohmann::json::object();
    }
    try {
        return nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "request body is not valid JSON", {{"position", e.id}});
    }
}

std::int64_t parseInteger(const std::string& name, const std::string& text)
{
    try {
        std::size_t used = 0;
        auto value = std::stoll(text, &used);
        if (used == text.size()) {
            return value;
        }
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidArgument, "query parameter " + name + " must be an integer", {{"parameter", name}});
}

const std::string* queryValue(const HttpRequest& request, const std::string& name)
{
    auto it = request.query.find(name);
    return it == request.query.end() ? nullptr : &it->second;
}

} // namespace

/*
 * Configuration.
 */

void GlobalConfig::validate() const
{
    if (!(timeScale > 0) || !std::isfinite(timeScale)) {
        throw configError("timeScale", "must be a positive number");
    }
    if (tokenTtlSeconds <= 0) {
        throw configError("tokenTtlSeconds", "must be positive");
    }
    if (authSecret.empty()) {
        throw configError("authSecret", "must not be empty");
    }
    if (evaluationIntervalMs < cMinEvaluationIntervalMs) {
        throw configError("evaluationIntervalMs", "must be at least " + std::to_string(cMinEvaluationIntervalMs));
    }
    if (storePath.empty()) {
        throw configError("storePath", "must not be empty");
    }
    if (requestTimeoutMs <= 0) {
        throw configError("requestTimeoutMs", "must be positive");
    }
    if (httpThreads == 0) {
        throw configError("httpThreads", "must be positive");
    }
    splitListen(listenAddress);
}

GlobalConfig configFromJson(const nlohmann::json& document, const std::filesystem::path& baseDir)
{
    if (!document.is_object()) {
        throw configError("config", "must be an object");
    }
    GlobalConfig config;
    auto field = [&](const char* name, auto& target) {
        if (!document.contains(name)) {
            return;
        }
        try {
            document.at(name).get_to(target);
        } catch (const nlohmann::json::exception&) {
            throw configError(name, "has the wrong type");
        }
    };
    auto resolve = [&](std::filesystem::path path) {
        return path.empty() || path.is_absolute() || baseDir.empty() ? path : baseDir / path;
    };

    std::string storePath = config.storePath.string();
    std::string testbedPath;
    field("listenAddress", config.listenAddress);
    field("storePath", storePath);
    field("timeScale", config.timeScale);
    field("evaluationIntervalMs", config.evaluationIntervalMs);
    field("testbedConfigPath", testbedPath);
    field("authSecret", config.authSecret);
    field("tokenTtlSeconds", config.tokenTtlSeconds);
    field("reallocationEnabled", config.reallocationEnabled);
    field("requestTimeoutMs", config.requestTimeoutMs);
    field("httpThreads", config.httpThreads);
    config.storePath = resolve(storePath);
    config.testbedConfigPath = resolve(testbedPath);

    if (document.contains("users")) {
        const auto& users = document.at("users");
        if (!users.is_array()) {
            throw configError("users", "must be an array");
        }
        for (const auto& entry : users) {
            if (!entry.is_object() || !entry.contains("user") || !entry.at("user").is_string()
                || !entry.contains("password") || !entry.at("password").is_string()) {
                throw configError("users", "entries need user and password strings");
            }
            config.users.push_back({entry.at("user").get<std::string>(), entry.at("password").get<std::string>()});
        }
    }
    return config;
}

void applyEnvironment(GlobalConfig& config)
{
    if (const char* scale = std::getenv("RM_TIME_SCALE"); scale && *scale) {
        try {
            std::size_t used = 0;
            config.timeScale = std::stod(scale, &used);
            if (used != std::string(scale).size()) {
                throw std::invalid_argument("trailing");
            }
        } catch (const std::exception&) {
            throw configError("timeScale", "RM_TIME_SCALE is not a number");
        }
    }
}

GlobalConfig loadConfig(const std::filesystem::path& path)
{
    std::filesystem::path effective = path;
    if (const char* env = std::getenv("RM_CONFIG"); env && *env) {
        effective = env;
    }
    std::ifstream in(effective);
    if (!in) {
        throw configError("config", "cannot read " + effective.string());
    }
    nlohmann::json document;
    try {
        document = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw configError("config", std::string("not valid JSON: ") + e.what());
    }
    auto config = configFromJson(document, effective.parent_path());
    applyEnvironment(config);
    config.validate();
    return config;
}

/*
 * Routing.
 */

int httpStatusFor(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ValidationFailed:
    case ErrorCode::InvalidArgument:
    case ErrorCode::ParseError:
    case ErrorCode::LineParseError:
    case ErrorCode::UnknownAggregator:
    case ErrorCode::IncompatibleArtifact:
        return 400;
    case ErrorCode::Unauthorized:
    case ErrorCode::InvalidCredentials:
        return 401;
    case ErrorCode::NotFound:
    case ErrorCode::UnknownHandle:
        return 404;
    case ErrorCode::ResourceConflict:
    case ErrorCode::IllegalTransition:
    case ErrorCode::NotRunning:
        return 409;
    case ErrorCode::QueueFull:
    case ErrorCode::QueueTimeout:
    case ErrorCode::Timeout:
    case ErrorCode::NoHandler:
    case ErrorCode::ProviderUnreachable:
        return 503;
    default:
        return 500;
    }
}

ApiRouter::ApiRouter(const Authenticator& auth, EventBus& bus, std::int64_t requestTimeoutMs)
    : mAuth(auth)
    , mBus(bus)
    , mTimeoutMs(requestTimeoutMs)
{
}

nlohmann::json ApiRouter::describe()
{
    auto route = [](const char* method, const char* path, bool auth, const char* summary) {
        return nlohmann::json {{"method", method}, {"path", path}, {"auth", auth}, {"summary", summary}};
    };
    return {{"routes",
        {
            route("POST", "/api/login", false, "exchange {user,password} for {token}"),
            route("GET", "/api/health", false, "liveness"),
            route("GET", "/api/spec", false, "this route list"),
            route("GET", "/api/resources", true, "list resources"),
            route("POST", "/api/resources", true, "register a resource"),
            route("GET", "/api/resources/{id}", true, "one resource"),
            route("GET", "/api/deployments", true, "list deployments"),
            route("POST", "/api/deployments", true, "create {assignments,slos,alerting,credentials} -> {id}"),
            route("GET", "/api/deployments/{id}", true, "status, transitions and timings"),
            route("DELETE", "/api/deployments/{id}", true, "terminate"),
            route("POST", "/api/deployments/{id}/startup", true, "start a stopped deployment"),
            route("POST", "/api/deployments/{id}/shutdown", true, "stop a ready deployment"),
            route("POST", "/api/deployments/{id}/invoke", true, "{artifact,payload} -> {response,rttMs}"),
            route("GET", "/api/metrics", true, "metric=&tag.k=v&fromMs=&toMs=&agg="),
            route("POST", "/api/metrics/push", true, "line protocol body"),
            route("GET", "/api/alerts", true, "alerts since fromMs"),
        }}};
}

nlohmann::json ApiRouter::call(const std::string& address, nlohmann::json body) const
{
    return mBus.request(address, std::move(body), mTimeoutMs);
}

HttpResponse ApiRouter::dispatch(const HttpRequest& request) const
{
    try {
        auto segments = splitPath(request.path);
        if (segments.empty() || segments[0] != "api") {
            throw Error(ErrorCode::NotFound, "no such route", {{"path", request.path}});
        }
        if (segments.size() == 2 && segments[1] == "health" && request.method == "GET") {
            return jsonResponse(200, {{"status", "up"}});
        }
        if (segments.size() == 2 && segments[1] == "spec" && request.method == "GET") {
            return jsonResponse(200, describe());
        }
        if (segments.size() == 2 && segments[1] == "login" && request.method == "POST") {
            auto body = parseBody(request.body);
            if (!body.is_object() || !body.contains("user") || !body.at("user").is_string()
                || !body.contains("password") || !body.at("password").is_string()) {
                throw Error(ErrorCode::InvalidArgument, "login needs user and password strings");
            }
            auto token = mAuth.login(body.at("user").get<std::string>(), body.at("password").get<std::string>());
            return jsonResponse(200, {{"token", token}});
        }

        auto header = request.headers.find("authorization");
        const std::string prefix = "Bearer ";
        if (header == request.headers.end() || header->second.rfind(prefix, 0) != 0) {
            throw Error(ErrorCode::Unauthorized, "missing bearer token");
        }
        auto claims = mAuth.verify(std::string_view(header->second).substr(prefix.size()));
        return route(request, segments, claims.subject);
    } catch (const Error& e) {
        return errorResponse(e);
    } catch (const std::exception& e) {
        spdlog::error("api: {} {} failed: {}", request.method, request.path, e.what());
        return jsonResponse(500, {{"error", "Internal"}, {"message", "internal error"}});
    }
}

HttpResponse ApiRouter::route(
    const HttpRequest& request, const std::vector<std::string>& segments, const std::string& subject) const
{
    const auto& method = request.method;
    const std::string& area = segments[1];
    const std::size_t n = segments.size();

    if (area == "resources") {
        if (n == 2 && method == "GET") {
            return jsonResponse(200, call("resources.list", nlohmann::json::object()));
        }
        if (n == 2 && method == "POST") {
            return jsonResponse(201, call("resources.create", parseBody(request.body)));
        }
        if (n == 3 && method == "GET") {
            return jsonResponse(200, call("resources.get", {{"id", segments[2]}}));
        }
    }

    if (area == "deployments") {
        if (n == 2 && method == "GET") {
            return jsonResponse(200, call("deployment.list", nlohmann::json::object()));
        }
        if (n == 2 && method == "POST") {
            return jsonResponse(201, call("deployment.create", {{"request", parseBody(request.body)}, {"ownerId", subject}}));
        }
        if (n == 3 && method == "GET") {
            auto deployment = call("deployment.get", {{"id", segments[2]}});
            deployment["sloStatus"] = call("alerts.sloStatus", {{"id", segments[2]}, {"slos", deployment.value("slos", nlohmann::json::array()).size()}});
            return jsonResponse(200, deployment);
        }
        if (n == 3 && method == "DELETE") {
            call("deployment.terminate", {{"id", segments[2]}});
            return jsonResponse(202, {{"id", segments[2]}});
        }
        if (n == 4 && method == "POST" && (segments[3] == "startup" || segments[3] == "shutdown")) {
            call("deployment." + segments[3], {{"id", segments[2]}});
            return jsonResponse(202, {{"id", segments[2]}});
        }
        if (n == 4 && method == "POST" && segments[3] == "invoke") {
            auto body = parseBody(request.body);
            if (!body.is_object()) {
                throw Error(ErrorCode::InvalidArgument, "invoke body must be an object");
            }
            body["id"] = segments[2];
            return jsonResponse(200, call("deployment.invoke", body));
        }
    }

    if (area == "metrics") {
        if (n == 2 && method == "GET") {
            const std::string* metric = queryValue(request, "metric");
            if (!metric || metric->empty()) {
                throw Error(ErrorCode::InvalidArgument, "query parameter metric is required");
            }
            nlohmann::json query = {{"metric", *metric}, {"tags", nlohmann::json::object()}};
            for (const auto& [key, value] : request.query) {
                if (key.rfind("tag.", 0) == 0 && key.size() > 4) {
                    query["tags"][key.substr(4)] = value;
                }
            }
            if (auto v = queryValue(request, "fromMs")) {
                query["fromMs"] = parseInteger("fromMs", *v);
            }
            if (auto v = queryValue(request, "toMs")) {
                query["toMs"] = parseInteger("toMs", *v);
            }
            if (auto v = queryValue(request, "agg"); v && !v->empty()) {
                query["agg"] = *v;
            }
            return jsonResponse(200, call("metrics.query", query));
        }
        if (n == 3 && method == "POST" && segments[2] == "push") {
            return jsonResponse(200, call("metrics.push", {{"text", request.body}}));
        }
    }

    if (area == "alerts" && n == 2 && method == "GET") {
        std::int64_t from = 0;
        if (auto v = queryValue(request, "fromMs")) {
            from = parseInteger("fromMs", *v);
        }
        return jsonResponse(200, call("alerts.list", {{"fromMs", from}}));
    }

    throw Error(ErrorCode::NotFound, "no such route", {{"method", method}, {"path", request.path}});
}

/*
 * Boot.
 */

std::unique_ptr<System> System::boot(const GlobalConfig& config)
{
    return boot(config, Overrides {});
}

void System::step(const std::string& component, const std::function<void()>& body)
{
    try {
        body();
    } catch (const std::exception& e) {
        spdlog::error("startup: {} failed: {}", component, e.what());
        throw Error(ErrorCode::StartupFailed, "startup failed at " + component + ": " + e.what(),
            {{"component", component.substr(0, component.find('.'))}, {"step", component}, {"cause", e.what()}});
    }
    mStartupOrder.push_back(component);
    spdlog::info("startup: [{}] {} started", mStartupOrder.size(), component);
}

std::unique_ptr<System> System::boot(const GlobalConfig& config, Overrides overrides)
{
    config.validate();
    std::unique_ptr<System> system(new System());
    System& s = *system;
    s.mConfig = config;
    if (overrides.testbed) {
        s.mTestbed = *overrides.testbed;
    } else if (!config.testbedConfigPath.empty()) {
        s.mTestbed = loadTestbed(config.testbedConfigPath);
    } else {
        s.mTestbed = defaultTestbed();
    }

    try {
        s.step("store.migrate", [&] {
            s.mStore = std::make_unique<Store>(config.storePath);
            s.mStore->migrate(Store::cLatestSchemaVersion);
        });
        s.step("store", [&] {
            for (const auto& resource : s.mTestbed.resources) {
                if (!s.mStore->findResource(resource.id)) {
                    s.mStore->putResource(resource);
                }
            }
            s.mAuth = std::make_unique<Authenticator>(*s.mStore, TokenSigner(config.authSecret, config.tokenTtlSeconds));
            for (const auto& user : config.users) {
                auto stored = s.mStore->userPasswordHash(user.user);
                if (!stored || !verifyPassword(user.password, *stored)) {
                    s.mAuth->addUser(user.user, user.password);
                }
            }
        });
        s.step("event-bus", [&] {
            s.mBus = std::make_unique<EventBus>();
            s.bindResources();
        });
        s.step("metrics-tsdb", [&] {
            s.mTsdb = std::make_unique<Tsdb>();
            s.bindMetrics();
        });
        s.step("provider-drivers", [&] {
            s.mSimulator = std::make_unique<ProviderSimulator>(s.mTestbed, config.timeScale);
        });
        s.step("deployment-engine", [&] {
            DeploymentEngine::Options options;
            options.evaluationIntervalMs = config.evaluationIntervalMs;
            s.mEngine = std::make_unique<DeploymentEngine>(*s.mStore, *s.mBus, *s.mSimulator, s.mTestbed, options);
            s.mEngine->bind();
            s.mCollector = std::make_unique<Collector>(*s.mStore, *s.mSimulator, *s.mTsdb,
                [engine = s.mEngine.get()](const Deployment& d) { return engine->probeLatency(d); });
            s.mCollector->start(static_cast<double>(config.evaluationIntervalMs) * config.timeScale);
        });
        s.step("slo-alerting", [&] {
            AlertManager::Options options;
            options.timeScale = config.timeScale;
            options.evaluationIntervalMs = config.evaluationIntervalMs;
            options.reallocationEnabled = config.reallocationEnabled;
            options.benchMode = overrides.benchMode;
            s.mAlerting = std::make_unique<AlertManager>(*s.mStore, *s.mTsdb, *s.mBus, options);
            s.mAlerting->setRefresher([collector = s.mCollector.get()](const DeploymentId& id) {
                collector->refreshDeployment(id);
            });
            s.mAlerting->setEngine(s.mEngine.get());
            s.bindAlerts();
            s.mAlerting->start();
        });
        s.mRouter = std::make_unique<ApiRouter>(*s.mAuth, *s.mBus, config.requestTimeoutMs);
        if (!overrides.withoutListener) {
            s.step("rest-listener", [&] {
                auto [host, port] = splitListen(config.listenAddress);
                s.mServer = std::make_unique<httplib::Server>();
                auto threads = config.httpThreads;
                s.mServer->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
                s.mServer->set_keep_alive_max_count(1000);
                s.mServer->set_tcp_nodelay(true);
                s.mServer->set_socket_options([](socket_t sock) {
                    int yes = 1;
                    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
                });
                auto handler = [router = s.mRouter.get()](const httplib::Request& req, httplib::Response& res) {
                    HttpRequest request;
                    request.method = req.method;
                    request.path = req.path;
                    for (const auto& [k, v] : req.params) {
                        request.query.emplace(k, v);
                    }
                    for (const auto& [k, v] : req.headers) {
                        std::string key = k;
                        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
                        request.headers[key] = v;
                    }
                    request.body = req.body;
                    auto response = router->dispatch(request);
                    res.status = response.status;
                    res.set_content(response.body, response.contentType);
                };
                s.mServer->Get(".*", handler);
                s.mServer->Post(".*", handler);
                s.mServer->Put(".*", handler);
                s.mServer->Delete(".*", handler);
                if (port == 0) {
                    s.mPort = s.mServer->bind_to_any_port(host);
                } else if (s.mServer->bind_to_port(host, port)) {
                    s.mPort = port;
                } else {
                    s.mPort = -1;
                }
                if (s.mPort <= 0) {
                    s.mPort = 0;
                    throw Error(ErrorCode::StartupFailed, "cannot bind " + config.listenAddress);
                }
                s.mListener = std::thread([server = s.mServer.get()] { server->listen_after_bind(); });
                s.mServer->wait_until_ready();
            });
        }
    } catch (...) {
        system->shutdown();
        throw;
    }
    return system;
}

void System::bindResources()
{
    Store& store = *mStore;
    mSubscriptions.push_back(mBus->subscribe("resources.list", [&store](const BusMessage&) {
        return nlohmann::json(store.listResources());
    }));
    mSubscriptions.push_back(mBus->subscribe("resources.get", [&store](const BusMessage& m) {
        return nlohmann::json(store.getResource(m.body.value("id", std::string())));
    }));
    mSubscriptions.push_back(mBus->subscribe("resources.create", [this, &store](const BusMessage& m) {
        ResourceRecord resource;
        try {
            resource = m.body.get<ResourceRecord>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::InvalidArgument, std::string("malformed resource: ") + e.what());
        }
        resource.validate();
        if (!mTestbed.findRegion(resource.region)) {
            throw Error(ErrorCode::InvalidArgument, "unknown region " + resource.region, {{"region", resource.region}});
        }
        if (store.findResource(resource.id)) {
            throw Error(ErrorCode::ResourceConflict, "resource " + resource.id + " already exists", {{"ids", {resource.id}}});
        }
        if (!resource.metricsEndpoint) {
            resource.metricsEndpoint = "sim://" + resource.id + "/metrics";
        }
        resource.state = ResourceState::Available;
        resource.deploymentId.reset();
        store.putResource(resource);
        return nlohmann::json(store.getResource(resource.id));
    }));
}

void System::bindMetrics()
{
    Tsdb& tsdb = *mTsdb;
    mSubscriptions.push_back(mBus->subscribe("metrics.query", [&tsdb](const BusMessage& m) {
        TagMap tags;
        if (m.body.contains("tags")) {
            for (const auto& [k, v] : m.body.at("tags").items()) {
                tags[k] = v.get<std::string>();
            }
        }
        std::optional<Aggregator> agg;
        if (m.body.contains("agg")) {
            agg = aggregatorFromString(m.body.at("agg").get<std::string>());
        }
        auto from = m.body.value("fromMs", TimestampMs {0});
        auto to = m.body.value("toMs", nowMs());
        return nlohmann::json(tsdb.query(m.body.value("metric", std::string()), tags, from, to, agg));
    }));
    mSubscriptions.push_back(mBus->subscribe("metrics.push", [&tsdb](const BusMessage& m) {
        auto result = tsdb.ingestText(m.body.value("text", std::string()));
        nlohmann::json rejected = nlohmann::json::array();
        for (const auto& [line, reason] : result.rejected) {
            rejected.push_back({{"line", line}, {"reason", reason}});
        }
        return nlohmann::json {{"accepted", result.accepted}, {"rejected", rejected}};
    }));
}

void System::bindAlerts()
{
    AlertManager& alerting = *mAlerting;
    mSubscriptions.push_back(mBus->subscribe("alerts.list", [&alerting](const BusMessage& m) {
        return nlohmann::json(alerting.alerts(m.body.value("fromMs", TimestampMs {0})));
    }));
    mSubscriptions.push_back(mBus->subscribe("alerts.sloStatus", [&alerting](const BusMessage& m) {
        auto id = m.body.value("id", std::string());
        auto count = m.body.value("slos", 0);
        nlohmann::json status = nlohmann::json::array();
        for (int i = 0; i < count; ++i) {
            status.push_back(toString(alerting.openEpisode(id, i) ? SloStatus::Violated : SloStatus::Ok));
        }
        return status;
    }));
}

std::string System::baseUrl() const
{
    auto [host, port] = splitListen(mConfig.listenAddress);
    return "http://" + host + ":" + std::to_string(mPort);
}

void System::shutdown()
{
    if (mShutDown) {
        return;
    }
    mShutDown = true;
    if (mServer) {
        mServer->stop();
    }
    if (mListener.joinable()) {
        mListener.join();
    }
    if (mAlerting) {
        mAlerting->stop();
        mAlerting->drain();
    }
    if (mCollector) {
        mCollector->stop();
    }
    if (mEngine) {
        mEngine->waitIdle();
    }
    mSubscriptions.clear();
}

System::~System()
{
    shutdown();
    mServer.reset();
    mAlerting.reset();
    mCollector.reset();
    mEngine.reset();
    mSimulator.reset();
    mTsdb.reset();
    mBus.reset();
    mAuth.reset();
    mStore.reset();
    spdlog::info("system stopped");
}

} // namespace rm
