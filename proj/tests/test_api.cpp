/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include <rm/api.hpp>
#include <rm/bench.hpp>

#include "support.hpp"

using namespace rm;
using nlohmann::json;

namespace {

GlobalConfig baseConfig(const std::filesystem::path& store)
{
    GlobalConfig c;
    c.listenAddress = "127.0.0.1:0";
    c.storePath = store;
    c.timeScale = 0.01;
    c.authSecret = "s3cret";
    c.users = {{"alice", "wonderland"}};
    return c;
}

std::optional<std::string> configField(const GlobalConfig& c)
{
    try {
        c.validate();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) {
            return e.details().value("field", "");
        }
    }
    return std::nullopt;
}

int freePort()
{
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr {};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

bool listening(int port)
{
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr {};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    bool ok = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0;
    ::close(fd);
    return ok;
}

HttpRequest req(std::string method, std::string path, std::string token = {}, std::string body = {})
{
    HttpRequest r;
    r.method = std::move(method);
    r.path = std::move(path);
    r.body = std::move(body);
    if (!token.empty()) {
        r.headers["authorization"] = "Bearer " + token;
    }
    return r;
}

json deploymentBody(const std::string& resource, const std::string& artifact = "function2")
{
    return {{"assignments", {{{"resourceId", resource}, {"artifact", artifact}}}},
        {"slos", {"latency < 10s"}},
        {"credentials", {{"FAAS_EDGE", "openfaas:k"}, {"CONTAINER", "k8s:k"}, {"SERVERLESS", "aws:k"}, {"VM", "aws:k"}}}};
}

} // namespace

TEST(Config, ValidateNamesField)
{
    test::TempDir dir;
    EXPECT_EQ(configField(baseConfig(dir.path())), std::nullopt);

    auto c = baseConfig(dir.path());
    c.timeScale = 0;
    EXPECT_EQ(configField(c), "timeScale");
    c = baseConfig(dir.path());
    c.timeScale = -1;
    EXPECT_EQ(configField(c), "timeScale");
    c = baseConfig(dir.path());
    c.evaluationIntervalMs = 99;
    EXPECT_EQ(configField(c), "evaluationIntervalMs");
    c = baseConfig(dir.path());
    c.authSecret.clear();
    EXPECT_EQ(configField(c), "authSecret");
    c = baseConfig(dir.path());
    c.tokenTtlSeconds = 0;
    EXPECT_EQ(configField(c), "tokenTtlSeconds");
    c = baseConfig(dir.path());
    c.listenAddress = "nohost";
    EXPECT_EQ(configField(c), "listenAddress");
}

TEST(Config, ShippedFilesMatchDefaults)
{
    const char* root = std::getenv("RM_SOURCE_DIR");
    if (root == nullptr) {
        GTEST_SKIP() << "RM_SOURCE_DIR not set";
    }
    ::unsetenv("RM_CONFIG");
    auto c = loadConfig(std::filesystem::path(root) / "config" / "rm.json");
    EXPECT_EQ(configField(c), std::nullopt);
    EXPECT_DOUBLE_EQ(c.timeScale, 1.0);

    auto shipped = loadTestbed(c.testbedConfigPath);
    auto builtIn = defaultTestbed();
    EXPECT_EQ(shipped.seed, builtIn.seed);
    ASSERT_EQ(shipped.resources.size(), builtIn.resources.size());
    for (std::size_t i = 0; i < shipped.resources.size(); ++i) {
        EXPECT_EQ(json(shipped.resources[i]), json(builtIn.resources[i]));
    }
    ASSERT_EQ(shipped.artifacts.size(), builtIn.artifacts.size());
    for (std::size_t i = 0; i < shipped.artifacts.size(); ++i) {
        EXPECT_EQ(json(shipped.artifacts[i]), json(builtIn.artifacts[i]));
    }
    EXPECT_EQ(shipped.credentialPrefixes, builtIn.credentialPrefixes);
}

TEST(Config, BootRejectsInvalidConfig)
{
    test::TempDir dir;
    auto c = baseConfig(dir.path() / "store");
    c.timeScale = 0;
    EXPECT_EQ(test::errorOf([&] { System::boot(c); }), ErrorCode::ConfigError);
    EXPECT_FALSE(std::filesystem::exists(dir.path() / "store"));
}

TEST(Config, FileAndEnvironment)
{
    test::TempDir dir;
    auto file = dir.path() / "rm.json";
    std::ofstream(file) << R"({"storePath": "data", "timeScale": 0.5, "authSecret": "x",
        "evaluationIntervalMs": 250, "users": [{"user": "u", "password": "p"}]})";

    ::unsetenv("RM_TIME_SCALE");
    ::setenv("RM_CONFIG", file.c_str(), 1);
    auto c = loadConfig("does-not-exist.json");
    EXPECT_EQ(c.storePath, dir.path() / "data");
    EXPECT_DOUBLE_EQ(c.timeScale, 0.5);
    EXPECT_EQ(c.evaluationIntervalMs, 250);
    ASSERT_EQ(c.users.size(), 1u);
    EXPECT_EQ(c.users[0].user, "u");

    ::setenv("RM_TIME_SCALE", "0.01", 1);
    EXPECT_DOUBLE_EQ(loadConfig("ignored").timeScale, 0.01);
    ::setenv("RM_TIME_SCALE", "0", 1);
    EXPECT_EQ(test::errorOf([] { loadConfig("ignored"); }), ErrorCode::ConfigError);
    ::setenv("RM_TIME_SCALE", "fast", 1);
    EXPECT_EQ(test::errorOf([] { loadConfig("ignored"); }), ErrorCode::ConfigError);
    ::unsetenv("RM_TIME_SCALE");
    ::unsetenv("RM_CONFIG");

    EXPECT_EQ(test::errorOf([] { configFromJson({{"timeScale", "fast"}}); }), ErrorCode::ConfigError);
}

TEST(Auth, Base64Url)
{
    EXPECT_EQ(base64UrlEncode(""), "");
    EXPECT_EQ(base64UrlEncode("f"), "Zg");
    EXPECT_EQ(base64UrlEncode("fo"), "Zm8");
    EXPECT_EQ(base64UrlEncode("foo"), "Zm9v");
    EXPECT_EQ(base64UrlEncode("\xfb\xff"), "-_8");
    std::mt19937 rng(7);
    for (int i = 0; i < 200; ++i) {
        std::string s(rng() % 40, '\0');
        for (auto& ch : s) {
            ch = static_cast<char>(rng());
        }
        ASSERT_EQ(base64UrlDecode(base64UrlEncode(s)), s);
    }
    EXPECT_EQ(test::errorOf([] { base64UrlDecode("a+b/"); }), ErrorCode::InvalidArgument);
}

TEST(Auth, PasswordHash)
{
    auto a = hashPassword("pw");
    auto b = hashPassword("pw");
    EXPECT_NE(a, b);
    EXPECT_EQ(a.rfind("pbkdf2$", 0), 0u);
    EXPECT_TRUE(verifyPassword("pw", a));
    EXPECT_TRUE(verifyPassword("pw", b));
    EXPECT_FALSE(verifyPassword("pW", a));
    EXPECT_FALSE(verifyPassword("pw", "garbage"));
}

TEST(Auth, Tokens)
{
    TokenSigner signer("k", 60);
    auto token = signer.issue("alice", 1000);
    auto claims = signer.verify(token, 1030);
    EXPECT_EQ(claims.subject, "alice");
    EXPECT_EQ(claims.issuedAt, 1000);
    EXPECT_EQ(claims.expiresAt, 1060);
    EXPECT_EQ(test::errorOf([&] { signer.verify(token, 1061); }), ErrorCode::Unauthorized);
    EXPECT_EQ(test::errorOf([&] { TokenSigner("other", 60).verify(token, 1030); }), ErrorCode::Unauthorized);

    auto tampered = token;
    auto dot = tampered.find('.');
    tampered[dot + 2] = tampered[dot + 2] == 'A' ? 'B' : 'A';
    EXPECT_EQ(test::errorOf([&] { signer.verify(tampered, 1030); }), ErrorCode::Unauthorized);
    EXPECT_EQ(test::errorOf([&] { signer.verify("x.y", 1030); }), ErrorCode::Unauthorized);
    EXPECT_EQ(test::errorOf([&] { signer.verify("", 1030); }), ErrorCode::Unauthorized);
}

TEST(Auth, Login)
{
    test::TempDir dir;
    Store store(dir.path());
    store.migrate(Store::cLatestSchemaVersion);
    Authenticator auth(store, TokenSigner("k", 60));
    auth.addUser("alice", "wonderland");
    auto token = auth.login("alice", "wonderland");
    EXPECT_EQ(auth.verify(token).subject, "alice");
    EXPECT_EQ(test::errorOf([&] { auth.login("alice", "nope"); }), ErrorCode::InvalidCredentials);
    EXPECT_EQ(test::errorOf([&] { auth.login("bob", "wonderland"); }), ErrorCode::InvalidCredentials);
}

TEST(Status, Mapping)
{
    EXPECT_EQ(httpStatusFor(ErrorCode::ValidationFailed), 400);
    EXPECT_EQ(httpStatusFor(ErrorCode::InvalidArgument), 400);
    EXPECT_EQ(httpStatusFor(ErrorCode::LineParseError), 400);
    EXPECT_EQ(httpStatusFor(ErrorCode::UnknownAggregator), 400);
    EXPECT_EQ(httpStatusFor(ErrorCode::Unauthorized), 401);
    EXPECT_EQ(httpStatusFor(ErrorCode::InvalidCredentials), 401);
    EXPECT_EQ(httpStatusFor(ErrorCode::NotFound), 404);
    EXPECT_EQ(httpStatusFor(ErrorCode::ResourceConflict), 409);
    EXPECT_EQ(httpStatusFor(ErrorCode::IllegalTransition), 409);
    EXPECT_EQ(httpStatusFor(ErrorCode::QueueFull), 503);
    EXPECT_EQ(httpStatusFor(ErrorCode::Timeout), 503);
    EXPECT_EQ(httpStatusFor(ErrorCode::Internal), 500);
}

class SystemTest : public ::testing::Test {
protected:
    test::TempDir dir;
};

TEST_F(SystemTest, BootOrder)
{
    auto system = System::boot(baseConfig(dir.path() / "store"));
    std::vector<std::string> expected {"store.migrate", "store", "event-bus", "metrics-tsdb", "provider-drivers",
        "deployment-engine", "slo-alerting", "rest-listener"};
    EXPECT_EQ(system->startupOrder(), expected);
    EXPECT_GT(system->port(), 0);
    EXPECT_TRUE(listening(system->port()));
}

TEST_F(SystemTest, UnwritableStoreFailsBeforeListener)
{
    std::ofstream(dir.path() / "plain") << "not a directory";
    auto c = baseConfig(dir.path() / "plain" / "store");
    int port = freePort();
    c.listenAddress = "127.0.0.1:" + std::to_string(port);
    try {
        System::boot(c);
        FAIL() << "boot succeeded";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::StartupFailed);
        EXPECT_EQ(e.details()["component"], "store");
    }
    EXPECT_FALSE(listening(port));
}

TEST_F(SystemTest, BusyPortFailsAtListener)
{
    auto first = System::boot(baseConfig(dir.path() / "a"));
    auto c = baseConfig(dir.path() / "b");
    c.listenAddress = "127.0.0.1:" + std::to_string(first->port());
    try {
        System::boot(c);
        FAIL() << "boot succeeded";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::StartupFailed);
        EXPECT_EQ(e.details()["component"], "rest-listener");
    }
}

TEST_F(SystemTest, RouterStatusCodes)
{
    System::Overrides overrides;
    overrides.withoutListener = true;
    auto system = System::boot(baseConfig(dir.path() / "store"), overrides);
    auto& router = system->router();

    EXPECT_EQ(router.dispatch(req("GET", "/api/health")).status, 200);
    EXPECT_EQ(router.dispatch(req("GET", "/api/metrics?metric=latency&agg=last")).status, 401);
    EXPECT_EQ(router.dispatch(req("GET", "/api/deployments", "not-a-token")).status, 401);
    EXPECT_EQ(router.dispatch(req("POST", "/api/login", {}, R"({"user":"alice","password":"x"})")).status, 401);

    auto login = router.dispatch(req("POST", "/api/login", {}, R"({"user":"alice","password":"wonderland"})"));
    ASSERT_EQ(login.status, 200);
    auto token = json::parse(login.body)["token"].get<std::string>();

    auto created = router.dispatch(req("POST", "/api/deployments", token, deploymentBody("r1").dump()));
    ASSERT_EQ(created.status, 201) << created.body;
    auto id = json::parse(created.body)["id"].get<std::string>();

    auto conflict = router.dispatch(req("POST", "/api/deployments", token, deploymentBody("r1").dump()));
    EXPECT_EQ(conflict.status, 409) << conflict.body;
    EXPECT_EQ(json::parse(conflict.body)["error"], "ResourceConflict");

    EXPECT_EQ(router.dispatch(req("GET", "/api/deployments/nope", token)).status, 404);
    EXPECT_EQ(router.dispatch(req("GET", "/api/nowhere", token)).status, 404);
    EXPECT_EQ(router.dispatch(req("POST", "/api/deployments", token, "{not json")).status, 400);
    EXPECT_EQ(router.dispatch(req("POST", "/api/deployments", token, R"({"assignments": 3})")).status, 400);

    auto metric = req("GET", "/api/metrics", token);
    metric.query.emplace("metric", "latency");
    metric.query.emplace("agg", "median");
    EXPECT_EQ(router.dispatch(metric).status, 400);

    auto got = router.dispatch(req("GET", "/api/deployments/" + id, token));
    EXPECT_EQ(got.status, 200);
    EXPECT_TRUE(json::parse(got.body).contains("sloStatus"));
}

TEST_F(SystemTest, InternalErrorsDoNotLeak)
{
    System::Overrides overrides;
    overrides.withoutListener = true;
    auto system = System::boot(baseConfig(dir.path() / "store"), overrides);
    auto sub = system->bus().subscribe("deployment.list",
        [](const BusMessage&) -> json { throw std::runtime_error("secret stack detail"); });
    auto token = system->auth().login("alice", "wonderland");
    // Two handlers round-robin; one of two consecutive calls hits the failing one.
    bool sawInternal = false;
    for (int i = 0; i < 2; ++i) {
        auto r = system->router().dispatch(req("GET", "/api/deployments", token));
        if (r.status == 500) {
            sawInternal = true;
            EXPECT_EQ(r.body.find("secret"), std::string::npos);
            EXPECT_EQ(json::parse(r.body)["error"], "Internal");
        }
    }
    EXPECT_TRUE(sawInternal);
}

TEST_F(SystemTest, RestRoundTripAndRestart)
{
    auto config = baseConfig(dir.path() / "store");
    std::string id;
    std::string token;
    {
        auto system = System::boot(config);
        bench::RestClient anonymous(system->baseUrl());
        auto health = anonymous.get("/api/health");
        EXPECT_EQ(health.status, 200);
        EXPECT_EQ(health.body["status"], "up");
        EXPECT_EQ(anonymous.get("/api/spec").status, 200);
        EXPECT_EQ(anonymous.get("/api/resources").status, 401);

        bench::RestClient client(system->baseUrl());
        client.login("alice", "wonderland");
        auto resources = client.get("/api/resources");
        ASSERT_EQ(resources.status, 200);
        EXPECT_EQ(resources.body.size(), 13u);

        auto created = client.post("/api/deployments", deploymentBody("r4", "service1"));
        ASSERT_EQ(created.status, 201) << created.body.dump();
        id = created.body["id"].get<std::string>();
        EXPECT_TRUE(test::eventually(
            [&] { return client.get("/api/deployments/" + id).body.value("status", "") == "READY"; }, 10000));

        auto alerts = client.get("/api/alerts?fromMs=0");
        EXPECT_EQ(alerts.status, 200);
        EXPECT_TRUE(alerts.body.is_array());
        EXPECT_EQ(client.get("/api/alerts?fromMs=soon").status, 400);

        token = system->auth().login("alice", "wonderland");
    }
    {
        auto system = System::boot(config);
        EXPECT_EQ(system->auth().verify(token).subject, "alice");
        auto r = system->router().dispatch(req("GET", "/api/deployments/" + id, token));
        ASSERT_EQ(r.status, 200);
        EXPECT_EQ(json::parse(r.body)["status"], "READY");
        EXPECT_EQ(system->store().findResource("r4")->state, ResourceState::Deployed);
    }
}
