/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <algorithm>
#include <atomic>
#include <thread>

#include <gtest/gtest.h>

#include <rm/engine.hpp>

#include "support.hpp"

using namespace rm;

namespace {

Testbed steadyTestbed()
{
    auto testbed = defaultTestbed();
    for (auto& [platform, profile] : testbed.profiles) {
        profile.deployLatencyMs.jitterFraction = 0.0;
        profile.terminateLatencyMs.jitterFraction = 0.0;
        profile.invokeNetworkMs.jitterFraction = 0.0;
        profile.startupLatencyMs.jitterFraction = 0.0;
        profile.shutdownLatencyMs.jitterFraction = 0.0;
    }
    return testbed;
}

std::map<Platform, std::string> goodCredentials()
{
    return {{Platform::FaasEdge, "openfaas:k"}, {Platform::Container, "k8s:k"}, {Platform::Serverless, "aws:k"},
        {Platform::Vm, "aws:k"}};
}

DeploymentRequest request(std::vector<Assignment> assignments)
{
    DeploymentRequest r;
    r.ownerId = "alice";
    r.assignments = std::move(assignments);
    r.credentials = goodCredentials();
    return r;
}

class EngineTest : public ::testing::Test {
protected:
    void boot(double timeScale, Testbed testbed = steadyTestbed())
    {
        store = std::make_unique<Store>(dir.path());
        store->migrate(Store::cLatestSchemaVersion);
        for (const auto& r : testbed.resources) {
            store->putResource(r);
        }
        sim = std::make_unique<ProviderSimulator>(testbed, timeScale);
        engine = std::make_unique<DeploymentEngine>(*store, bus, *sim, testbed);
    }

    void TearDown() override
    {
        if (engine) {
            engine->waitIdle();
        }
    }

    DeploymentStatus waitFor(const DeploymentId& id, std::vector<DeploymentStatus> statuses, double timeoutMs = 10000)
    {
        DeploymentStatus last = DeploymentStatus::New;
        test::eventually(
            [&] {
                last = store->getDeployment(id).status;
                return std::find(statuses.begin(), statuses.end(), last) != statuses.end();
            },
            timeoutMs);
        return last;
    }

    bool waitIdleOp(const DeploymentId& id)
    {
        return test::eventually([&] { return store->getDeployment(id).pendingOp.empty(); }, 10000);
    }

    test::TempDir dir;
    EventBus bus;
    std::unique_ptr<Store> store;
    std::unique_ptr<ProviderSimulator> sim;
    std::unique_ptr<DeploymentEngine> engine;
};

} // namespace

TEST(Url, WellFormedCheck)
{
    EXPECT_TRUE(isWellFormedUrl("http://127.0.0.1:8080/alerts"));
    EXPECT_TRUE(isWellFormedUrl("https://example.org"));
    EXPECT_FALSE(isWellFormedUrl("ftp://example.org"));
    EXPECT_FALSE(isWellFormedUrl("http://"));
    EXPECT_FALSE(isWellFormedUrl("http://host:notaport/x"));
    EXPECT_FALSE(isWellFormedUrl("not a url"));
}

TEST(Request, FromJson)
{
    auto body = nlohmann::json::parse(R"({
      "assignments": [{"resourceId": "r1", "artifact": "function1"}],
      "slos": ["latency < 10s"],
      "alerting": {"enabled": true, "webhookUrl": "http://127.0.0.1:9/x"},
      "credentials": {"FAAS_EDGE": "openfaas:k"}
    })");
    auto r = DeploymentRequest::fromJson(body, "bob");
    EXPECT_EQ(r.ownerId, "bob");
    ASSERT_EQ(r.assignments.size(), 1u);
    EXPECT_EQ(r.assignments[0].artifactRef, "function1");
    EXPECT_EQ(r.slos, std::vector<std::string> {"latency < 10s"});
    EXPECT_TRUE(r.alerting.enabled);
    EXPECT_EQ(r.credentials.at(Platform::FaasEdge), "openfaas:k");
    EXPECT_EQ(test::errorOf([] { DeploymentRequest::fromJson(nlohmann::json::array(), "x"); }),
        ErrorCode::ValidationFailed);
    EXPECT_EQ(test::errorOf([] { DeploymentRequest::fromJson({{"assignments", 3}}, "x"); }),
        ErrorCode::ValidationFailed);
}

TEST_F(EngineTest, ValidationReasons)
{
    boot(0.0);
    EXPECT_EQ(engine->validate(request({})).reasons, std::vector<std::string> {"no resources requested"});

    auto ok = request({{"r1", "function1"}});
    ok.slos = {"latency < 10s"};
    EXPECT_TRUE(engine->validate(ok).ok());

    auto unknown = request({{"nope", "function1"}});
    EXPECT_EQ(engine->validate(unknown).reasons, std::vector<std::string> {"unknown resource nope"});

    auto incompatible = request({{"r4", "function1"}});
    ASSERT_EQ(engine->validate(incompatible).reasons.size(), 1u);
    EXPECT_NE(engine->validate(incompatible).reasons[0].find("cannot run on resource r4"), std::string::npos);

    auto badSlo = request({{"r1", "function1"}});
    badSlo.slos = {"availability >> 3"};
    ASSERT_EQ(engine->validate(badSlo).reasons.size(), 1u);
    EXPECT_EQ(engine->validate(badSlo).reasons[0].rfind("malformed SLO", 0), 0u);

    auto badHook = request({{"r1", "function1"}});
    badHook.alerting = {true, "nope"};
    EXPECT_EQ(engine->validate(badHook).reasons.size(), 1u);

    auto twice = request({{"r1", "function1"}, {"r1", "function1"}});
    EXPECT_EQ(engine->validate(twice).reasons.size(), 1u);

    EXPECT_EQ(store->listDeployments().size(), 0u);
}

TEST_F(EngineTest, MixedCredentialsNameOnlyBadPlatform)
{
    boot(0.0);
    auto r = request({{"r1", "function1"}, {"r2", "function1"}, {"r12", "function1"}, {"r13", "function1"}});
    r.credentials[Platform::Serverless] = "openfaas:wrong";
    auto reasons = engine->validate(r).reasons;
    ASSERT_EQ(reasons.size(), 2u);
    for (const auto& reason : reasons) {
        EXPECT_NE(reason.find("SERVERLESS"), std::string::npos) << reason;
        EXPECT_EQ(reason.find("FAAS_EDGE"), std::string::npos) << reason;
    }
    EXPECT_NE(reasons[0].find("r12"), std::string::npos);
    EXPECT_NE(reasons[1].find("r13"), std::string::npos);
}

TEST_F(EngineTest, UnreachableResourceRejected)
{
    boot(0.0);
    sim->setRegionReachable("us-east-1", false);
    auto reasons = engine->validate(request({{"r11", "function1"}})).reasons;
    EXPECT_EQ(reasons, std::vector<std::string> {"resource r11 is unreachable"});
}

TEST_F(EngineTest, CreateRespondsBeforeReady)
{
    boot(0.1);
    double start = steadyMs();
    auto id = engine->createDeployment(request({{"r1", "function1"}}));
    double response = steadyMs() - start;
    EXPECT_EQ(store->getDeployment(id).status, DeploymentStatus::Deploying);
    EXPECT_EQ(store->getResource("r1").state, ResourceState::Reserved);
    EXPECT_EQ(waitFor(id, {DeploymentStatus::Ready}), DeploymentStatus::Ready);

    auto d = store->getDeployment(id);
    EXPECT_EQ(store->getResource("r1").state, ResourceState::Deployed);
    EXPECT_NEAR(*d.deploymentTimeMs(), 400.0, 40.0);
    EXPECT_LT(response * 50, *d.deploymentTimeMs());
    EXPECT_EQ(d.credentialsRef, "cred-" + id);
    EXPECT_TRUE(store->credentials(d.credentialsRef));
    ASSERT_EQ(d.handles.size(), 1u);
    std::set<DeploymentStatus> seen;
    for (const auto& t : d.transitions) {
        EXPECT_TRUE(seen.insert(t.status).second) << "status recorded twice";
    }
}

TEST_F(EngineTest, InvalidRequestPersistsNothing)
{
    boot(0.0);
    try {
        engine->createDeployment(request({{"r1", "function1"}, {"ghost", "function1"}}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ValidationFailed);
        EXPECT_EQ(e.details()["reasons"], nlohmann::json::array({"unknown resource ghost"}));
    }
    EXPECT_TRUE(store->listDeployments().empty());
    EXPECT_TRUE(store->reservations().empty());
    EXPECT_EQ(store->getResource("r1").state, ResourceState::Available);
}

TEST_F(EngineTest, ConflictPropagatesAndLeavesNoRecord)
{
    boot(0.0);
    auto first = engine->createDeployment(request({{"r1", "function1"}}));
    EXPECT_EQ(test::errorOf([&] { engine->createDeployment(request({{"r2", "function1"}, {"r1", "function1"}})); }),
        ErrorCode::ResourceConflict);
    ASSERT_EQ(store->listDeployments().size(), 1u);
    EXPECT_EQ(store->listDeployments()[0].id, first);
    EXPECT_EQ(store->getResource("r2").state, ResourceState::Available);
}

TEST_F(EngineTest, AllTypesReadyAfterSlowestDriver)
{
    boot(0.01);
    auto id = engine->createDeployment(request({{"r1", "function1"}, {"r2", "function1"}, {"r3", "function1"},
        {"r4", "service1"}, {"r10", "service1"}, {"r11", "function1"}, {"r12", "function1"}}));
    EXPECT_TRUE(test::eventually(
        [&] {
            auto s = store->getDeployment(id).status;
            if (s == DeploymentStatus::Deploying) {
                auto handles = engine->handles(id);
                EXPECT_LT(handles.size(), 7u);
            }
            return s == DeploymentStatus::Ready;
        },
        10000));
    auto d = store->getDeployment(id);
    // Oracle: slowest single step. VM is alone on its platform so it pays no penalty.
    double expected = 0;
    for (const auto& a : d.assignments) {
        auto r = store->getResource(a.resourceId);
        const auto& profile = sim->simulatedDriver(r.platform).profile();
        int samePlatform = 0;
        for (const auto& b : d.assignments) {
            samePlatform += store->getResource(b.resourceId).platform == r.platform;
        }
        double pull = static_cast<double>(engine->catalog().findArtifact(a.artifactRef)->behavior.imagePullMs);
        double step = pull + profile.deployLatencyMs.meanMs + profile.perDeploymentPenaltyMs * (samePlatform - 1);
        expected = std::max(expected, step * 0.01);
    }
    EXPECT_DOUBLE_EQ(expected, 2000.0);
    EXPECT_NEAR(*d.deploymentTimeMs(), expected, 150.0);
    EXPECT_EQ(engine->handles(id).size(), 7u);
}

TEST_F(EngineTest, TerminateVmTakesAboutSixHundredFiftyMs)
{
    boot(0.01);
    auto id = engine->createDeployment(request({{"r11", "function1"}}));
    ASSERT_EQ(waitFor(id, {DeploymentStatus::Ready}), DeploymentStatus::Ready);
    engine->terminateDeployment(id);
    EXPECT_EQ(store->getDeployment(id).status, DeploymentStatus::Terminating);
    auto second = test::errorOf([&] { engine->terminateDeployment(id); });
    ASSERT_TRUE(second);
    EXPECT_TRUE(*second == ErrorCode::IllegalTransition || *second == ErrorCode::NotFound);
    ASSERT_EQ(waitFor(id, {DeploymentStatus::Terminated}), DeploymentStatus::Terminated);
    auto d = store->getDeployment(id);
    EXPECT_NEAR(*d.terminationTimeMs(), 650.0, 100.0);
    EXPECT_EQ(store->getResource("r11").state, ResourceState::Available);
    EXPECT_EQ(test::errorOf([&] { engine->terminateDeployment("ghost"); }), ErrorCode::NotFound);
}

TEST_F(EngineTest, TerminateWhileDeployingIllegal)
{
    boot(0.01);
    auto id = engine->createDeployment(request({{"r11", "function1"}}));
    EXPECT_EQ(test::errorOf([&] { engine->terminateDeployment(id); }), ErrorCode::IllegalTransition);
    waitFor(id, {DeploymentStatus::Ready});
}

TEST_F(EngineTest, StartStopKeepsPullCount)
{
    boot(0.01);
    auto id = engine->createDeployment(request({{"r4", "service1"}, {"r1", "function1"}}));
    ASSERT_EQ(waitFor(id, {DeploymentStatus::Ready}), DeploymentStatus::Ready);
    auto before = engine->handles(id);

    EXPECT_EQ(test::errorOf([&] { engine->startup(id); }), ErrorCode::IllegalTransition);
    engine->shutdown(id);
    EXPECT_EQ(test::errorOf([&] { engine->shutdown(id); }), ErrorCode::IllegalTransition);
    ASSERT_TRUE(waitIdleOp(id));
    EXPECT_EQ(store->getDeployment(id).status, DeploymentStatus::Stopped);
    for (const auto& h : engine->handles(id)) {
        EXPECT_FALSE(h.running);
    }
    EXPECT_EQ(test::errorOf([&] { engine->invoke(id, "function1", nullptr); }), ErrorCode::NotRunning);

    engine->startup(id);
    ASSERT_TRUE(waitIdleOp(id));
    auto d = store->getDeployment(id);
    EXPECT_EQ(d.status, DeploymentStatus::Ready);
    auto after = engine->handles(id);
    ASSERT_EQ(after.size(), before.size());
    for (std::size_t i = 0; i < after.size(); ++i) {
        EXPECT_EQ(after[i].pullCount, before[i].pullCount);
        EXPECT_TRUE(after[i].running);
    }
    ASSERT_TRUE(d.startupTimeMs && d.shutdownTimeMs);
    EXPECT_LT(*d.startupTimeMs, *d.deploymentTimeMs());
    EXPECT_EQ(test::errorOf([&] { engine->startup("ghost"); }), ErrorCode::NotFound);
}

TEST_F(EngineTest, DriverFailureRollsBack)
{
    boot(0.01);
    sim->failNextDeploys(1);
    auto id = engine->createDeployment(request({{"r1", "function1"}, {"r4", "service1"}, {"r12", "function1"}}));
    ASSERT_EQ(waitFor(id, {DeploymentStatus::Error, DeploymentStatus::Ready}), DeploymentStatus::Error);
    engine->waitIdle();
    for (const auto& rid : {"r1", "r4", "r12"}) {
        EXPECT_EQ(store->getResource(rid).state, ResourceState::Available) << rid;
    }
    for (Platform p : cAllPlatforms) {
        for (const auto& r : {"r1", "r4", "r12"}) {
            EXPECT_EQ(sim->simulatedDriver(p).handlesOn(r), 0u);
        }
    }
    engine->terminateDeployment(id);
    EXPECT_EQ(waitFor(id, {DeploymentStatus::Terminated}), DeploymentStatus::Terminated);
}

TEST_F(EngineTest, RandomFailuresAlwaysAtomic)
{
    boot(0.0);
    sim->setDeployFailureProbability(0.3);
    std::vector<DeploymentId> ids;
    for (int round = 0; round < 10; ++round) {
        auto id = engine->createDeployment(request({{"r1", "function1"}, {"r2", "function1"}, {"r4", "service1"}}));
        auto status = waitFor(id, {DeploymentStatus::Error, DeploymentStatus::Ready});
        engine->waitIdle();
        if (status == DeploymentStatus::Error) {
            for (const auto& rid : {"r1", "r2", "r4"}) {
                EXPECT_EQ(store->getResource(rid).state, ResourceState::Available);
            }
        } else {
            EXPECT_EQ(store->getResource("r1").state, ResourceState::Deployed);
        }
        engine->terminateDeployment(id);
        waitFor(id, {DeploymentStatus::Terminated});
        engine->waitIdle();
    }
}

TEST_F(EngineTest, InvokeAndProbe)
{
    boot(0.0);
    auto id = engine->createDeployment(request({{"r1", "function1"}, {"r11", "function1"}}));
    ASSERT_EQ(waitFor(id, {DeploymentStatus::Ready}), DeploymentStatus::Ready);
    auto result = engine->invoke(id, "function1", {{"x", 1}}, std::string("r1"));
    EXPECT_DOUBLE_EQ(result.serviceMs, 1000.0);
    EXPECT_EQ(test::errorOf([&] { engine->invoke(id, "function1", nullptr, std::string("r4")); }),
        ErrorCode::NotFound);
    auto perResource = engine->probeByResource(store->getDeployment(id));
    ASSERT_EQ(perResource.size(), 2u);
    double slowest = std::max(perResource.at("r1"), perResource.at("r11"));
    auto latency = engine->probeLatency(store->getDeployment(id));
    ASSERT_TRUE(latency);
    EXPECT_GE(*latency, 1000.0);
    EXPECT_LE(*latency, slowest + 1000.0);
}

TEST_F(EngineTest, ReassignMovesWorkload)
{
    boot(0.0);
    auto id = engine->createDeployment(request({{"r12", "function1"}}));
    ASSERT_EQ(waitFor(id, {DeploymentStatus::Ready}), DeploymentStatus::Ready);
    engine->reassign(id, "r12", "r13");
    auto d = store->getDeployment(id);
    EXPECT_EQ(d.status, DeploymentStatus::Ready);
    EXPECT_EQ(d.assignments[0].resourceId, "r13");
    EXPECT_EQ(store->getResource("r12").state, ResourceState::Available);
    EXPECT_EQ(store->getResource("r13").state, ResourceState::Deployed);
    EXPECT_EQ(engine->handles(id).at(0).resourceId, "r13");
    EXPECT_EQ(test::errorOf([&] { engine->reassign(id, "r13", "r1"); }), ErrorCode::InvalidArgument);
}

TEST_F(EngineTest, PlanStepsUnique)
{
    boot(0.0);
    Deployment d;
    d.id = "x";
    d.assignments = {{"r1", "function1"}, {"r4", "service1"}};
    auto plan = engine->plan(d);
    ASSERT_EQ(plan.steps.size(), 2u);
    EXPECT_NE(plan.steps[0].resourceId, plan.steps[1].resourceId);
    EXPECT_TRUE(plan.steps[0].parallelizable);
    EXPECT_EQ(plan.steps[1].platform, Platform::Container);
}

TEST_F(EngineTest, BusInterface)
{
    boot(0.0);
    engine->bind();
    std::atomic<int> statusEvents {0};
    auto sub = bus.subscribe("deployment.status", [&](const BusMessage&) {
        ++statusEvents;
        return nlohmann::json();
    });
    nlohmann::json body = {{"ownerId", "alice"},
        {"request",
            {{"assignments", {{{"resourceId", "r1"}, {"artifact", "function1"}}}},
                {"credentials", {{"FAAS_EDGE", "openfaas:k"}}}}}};
    auto reply = bus.request("deployment.create", body, 5000);
    auto id = reply.at("id").get<std::string>();
    ASSERT_EQ(waitFor(id, {DeploymentStatus::Ready}), DeploymentStatus::Ready);
    EXPECT_EQ(bus.request("deployment.get", {{"id", id}}, 5000)["status"], "READY");
    EXPECT_EQ(bus.request("deployment.list", nlohmann::json::object(), 5000).size(), 1u);
    auto invoked = bus.request("deployment.invoke", {{"id", id}, {"artifact", "function1"}}, 5000);
    EXPECT_GT(invoked["rttMs"].get<double>(), 1000.0);
    try {
        bus.request("deployment.create", {{"ownerId", "a"}, {"request", {{"assignments", nlohmann::json::array()}}}},
            5000);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ValidationFailed);
        EXPECT_EQ(e.details()["reasons"][0], "no resources requested");
    }
    bus.request("deployment.terminate", {{"id", id}}, 5000);
    ASSERT_EQ(waitFor(id, {DeploymentStatus::Terminated}), DeploymentStatus::Terminated);
    EXPECT_TRUE(test::eventually([&] { return statusEvents >= 4; }));
}
