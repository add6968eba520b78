/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <atomic>
#include <fstream>
#include <thread>

#include <csignal>
#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include <rm/store.hpp>

#include "support.hpp"

using namespace rm;

namespace {

ResourceRecord resource(const std::string& id, Platform platform = Platform::FaasEdge)
{
    return ResourceRecord {id, platform, "uibk", 4, 8.0, 32.0, 0.0};
}

Deployment validating(const std::string& id, std::vector<std::string> resources = {})
{
    Deployment d;
    d.id = id;
    d.ownerId = "owner";
    for (auto& r : resources) {
        d.assignments.push_back({r, "function1"});
    }
    d.apply(LifecycleEvent::ValidateOk, nowMs());
    return d;
}

std::unique_ptr<Store> openMigrated(const std::filesystem::path& dir)
{
    auto store = std::make_unique<Store>(dir);
    store->migrate(Store::cLatestSchemaVersion);
    return store;
}

} // namespace

TEST(Migrate, FreshStoreAppliesAllVersions)
{
    test::TempDir dir;
    Store store(dir.path());
    EXPECT_EQ(store.schemaVersion(), 0);
    EXPECT_EQ(store.migrate(3), (std::vector<int> {1, 2, 3}));
    EXPECT_EQ(store.schemaVersion(), 3);
}

TEST(Migrate, IdempotentAtTarget)
{
    test::TempDir dir;
    {
        Store store(dir.path());
        store.migrate(3);
        EXPECT_TRUE(store.migrate(3).empty());
    }
    Store reopened(dir.path());
    EXPECT_EQ(reopened.schemaVersion(), 3);
    EXPECT_TRUE(reopened.migrate(3).empty());
}

TEST(Migrate, DowngradeRejected)
{
    test::TempDir dir;
    Store store(dir.path());
    store.migrate(2);
    EXPECT_EQ(test::errorOf([&] { store.migrate(1); }), ErrorCode::MigrationFailed);
    EXPECT_EQ(store.schemaVersion(), 2);
}

TEST(Migrate, FailingScriptStopsAtLastGoodVersion)
{
    test::TempDir dir;
    Store::Options options;
    options.migrations = {{1, "create table resources\n"}, {2, "create table resources\n"}, {3, "create table users\n"}};
    {
        Store store(dir.path(), options);
        EXPECT_EQ(test::errorOf([&] { store.migrate(3); }), ErrorCode::MigrationFailed);
        EXPECT_EQ(store.schemaVersion(), 1);
    }
    Store reopened(dir.path(), options);
    EXPECT_EQ(reopened.schemaVersion(), 1);
}

TEST(Migrate, MissingScriptRejected)
{
    test::TempDir dir;
    Store store(dir.path());
    EXPECT_EQ(test::errorOf([&] { store.migrate(4); }), ErrorCode::MigrationFailed);
    EXPECT_EQ(store.schemaVersion(), 3);
}

TEST(Migrate, UnmigratedTablesRejectWrites)
{
    test::TempDir dir;
    Store store(dir.path());
    EXPECT_TRUE(test::errorOf([&] { store.putResource(resource("r1")); }).has_value());
}

TEST(Reserve, CommitsAtomically)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    store->putResource(resource("r1"));
    store->putResource(resource("r2"));
    store->putDeployment(validating("d1", {"r1", "r2"}));
    auto reservation = store->reserveResources("d1", {"r1", "r2"});
    EXPECT_EQ(reservation.resourceIds, (std::set<ResourceId> {"r1", "r2"}));
    EXPECT_EQ(store->getResource("r1").state, ResourceState::Reserved);
    EXPECT_EQ(store->getResource("r1").deploymentId, "d1");
    EXPECT_EQ(store->getDeployment("d1").status, DeploymentStatus::Deploying);
}

TEST(Reserve, ConflictChangesNothing)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    store->putResource(resource("r1"));
    store->putResource(resource("r2"));
    store->putDeployment(validating("d1"));
    store->putDeployment(validating("d2"));
    store->reserveResources("d1", {"r1"});
    try {
        store->reserveResources("d2", {"r2", "r1"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ResourceConflict);
        EXPECT_EQ(e.details().at("ids"), nlohmann::json::array({"r1"}));
    }
    EXPECT_EQ(store->getResource("r2").state, ResourceState::Available);
    EXPECT_EQ(store->getDeployment("d2").status, DeploymentStatus::Validating);
    EXPECT_EQ(store->reservations().size(), 1u);
}

TEST(Reserve, EmptySetAndUnknownIds)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    store->putDeployment(validating("d1"));
    EXPECT_EQ(test::errorOf([&] { store->reserveResources("d1", {}); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(test::errorOf([&] { store->reserveResources("d1", {"nope"}); }), ErrorCode::NotFound);
    EXPECT_EQ(test::errorOf([&] { store->reserveResources("ghost", {"nope"}); }), ErrorCode::NotFound);
}

TEST(Reserve, TwoConcurrentCallsOneWins)
{
    for (int round = 0; round < 20; ++round) {
        test::TempDir dir;
        auto store = openMigrated(dir.path());
        store->putResource(resource("r1"));
        store->putDeployment(validating("a"));
        store->putDeployment(validating("b"));
        std::atomic<int> ok {0};
        std::atomic<int> conflicts {0};
        auto attempt = [&](const std::string& id) {
            try {
                store->reserveResources(id, {"r1"});
                ++ok;
            } catch (const Error& e) {
                if (e.code() == ErrorCode::ResourceConflict) {
                    ++conflicts;
                }
            }
        };
        std::thread t1(attempt, "a");
        std::thread t2(attempt, "b");
        t1.join();
        t2.join();
        EXPECT_EQ(ok, 1);
        EXPECT_EQ(conflicts, 1);
    }
}

TEST(Reserve, HundredCallsTenResources)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    for (int r = 0; r < 10; ++r) {
        store->putResource(resource("r" + std::to_string(r)));
    }
    for (int i = 0; i < 100; ++i) {
        store->putDeployment(validating("d" + std::to_string(i)));
    }
    std::atomic<int> committed {0};
    std::vector<std::thread> threads;
    for (int i = 0; i < 100; ++i) {
        threads.emplace_back([&, i] {
            try {
                store->reserveResources("d" + std::to_string(i), {"r" + std::to_string(i % 10)});
                ++committed;
            } catch (const Error& e) {
                EXPECT_EQ(e.code(), ErrorCode::ResourceConflict);
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    EXPECT_EQ(committed, 10);

    // Brute-force cross check of reservations against resource states.
    auto reservations = store->reservations();
    EXPECT_EQ(reservations.size(), 10u);
    std::map<ResourceId, DeploymentId> owners;
    for (const auto& res : reservations) {
        for (const auto& id : res.resourceIds) {
            EXPECT_TRUE(owners.emplace(id, res.deploymentId).second) << id << " reserved twice";
        }
    }
    std::size_t held = 0;
    for (const auto& r : store->listResources()) {
        ASSERT_EQ(r.state, ResourceState::Reserved);
        EXPECT_EQ(r.deploymentId, owners.at(r.id));
        EXPECT_EQ(store->getDeployment(*r.deploymentId).status, DeploymentStatus::Deploying);
        auto c = store->counters(r.id);
        held += c.reserved - c.released;
    }
    EXPECT_EQ(held, 10u);
}

TEST(Reserve, SerialReplayMatchesConcurrentOutcome)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    for (int r = 0; r < 6; ++r) {
        store->putResource(resource("r" + std::to_string(r)));
    }
    std::vector<std::set<ResourceId>> requests;
    for (int i = 0; i < 30; ++i) {
        requests.push_back({"r" + std::to_string(i % 6), "r" + std::to_string((i * 7 + 1) % 6)});
        store->putDeployment(validating("d" + std::to_string(i)));
    }
    std::vector<std::thread> threads;
    for (int i = 0; i < 30; ++i) {
        threads.emplace_back([&, i] {
            try {
                store->reserveResources("d" + std::to_string(i), requests[i]);
            } catch (const Error&) {
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }

    // Replay the requests serially in commit order of the winners followed by the losers.
    auto reservations = store->reservations();
    std::sort(reservations.begin(), reservations.end(),
        [](const Reservation& a, const Reservation& b) { return a.committedAtMs < b.committedAtMs; });
    std::map<ResourceId, std::string> state;
    std::set<std::string> winners;
    for (const auto& res : reservations) {
        winners.insert(res.deploymentId);
        for (const auto& id : res.resourceIds) {
            EXPECT_FALSE(state.count(id));
            state[id] = res.deploymentId;
        }
    }
    for (int i = 0; i < 30; ++i) {
        auto id = "d" + std::to_string(i);
        if (winners.count(id)) {
            continue;
        }
        bool blocked = false;
        for (const auto& r : requests[i]) {
            blocked |= state.count(r) > 0;
        }
        EXPECT_TRUE(blocked) << id << " lost although its resources were free";
    }
    for (const auto& r : store->listResources()) {
        if (state.count(r.id)) {
            EXPECT_EQ(r.state, ResourceState::Reserved);
            EXPECT_EQ(r.deploymentId, state[r.id]);
        } else {
            EXPECT_EQ(r.state, ResourceState::Available);
        }
    }
}

TEST(Release, InverseAndIdempotent)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    store->putResource(resource("r1"));
    store->putResource(resource("r2"));
    store->putDeployment(validating("d1"));
    store->reserveResources("d1", {"r1", "r2"});
    EXPECT_EQ(store->releaseResources("d1"), 2u);
    EXPECT_EQ(store->getResource("r1").state, ResourceState::Available);
    EXPECT_EQ(store->getResource("r2").state, ResourceState::Available);
    EXPECT_FALSE(store->getResource("r1").deploymentId);
    EXPECT_EQ(store->releaseResources("d1"), 0u);
    EXPECT_EQ(test::errorOf([&] { store->releaseResources("ghost"); }), ErrorCode::NotFound);
}

TEST(Release, DeployedResourcesReturnToAvailable)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    store->putResource(resource("r1"));
    store->putDeployment(validating("d1"));
    store->reserveResources("d1", {"r1"});
    store->markDeployed("d1");
    EXPECT_EQ(store->getResource("r1").state, ResourceState::Deployed);
    EXPECT_EQ(store->releaseResources("d1"), 1u);
    EXPECT_EQ(store->getResource("r1").state, ResourceState::Available);
    auto c = store->counters("r1");
    EXPECT_EQ(c.reserved, 1u);
    EXPECT_EQ(c.released, 1u);
}

TEST(Swap, MovesAssignmentToNewResource)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    store->putResource(resource("r1"));
    store->putResource(resource("r2"));
    store->putDeployment(validating("d1", {"r1"}));
    store->reserveResources("d1", {"r1"});
    store->markDeployed("d1");
    store->swapResource("d1", "r1", "r2");
    EXPECT_EQ(store->getResource("r1").state, ResourceState::Available);
    EXPECT_EQ(store->getResource("r2").state, ResourceState::Deployed);
    EXPECT_EQ(store->getDeployment("d1").assignments.at(0).resourceId, "r2");
}

TEST(Deployments, AlertingFilterMatchesScan)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    EXPECT_TRUE(store->listDeploymentsWithAlerting().empty());

    std::mt19937 rng(7);
    const DeploymentStatus statuses[] = {DeploymentStatus::Validating, DeploymentStatus::Ready,
        DeploymentStatus::Stopped, DeploymentStatus::Terminated, DeploymentStatus::Error};
    for (int i = 0; i < 60; ++i) {
        Deployment d;
        d.id = "d" + std::to_string(i);
        d.alerting.enabled = rng() % 2 == 0;
        d.status = statuses[rng() % 5];
        store->putDeployment(d);
    }
    std::set<std::string> expected;
    for (const auto& d : store->listDeployments()) {
        if (d.alerting.enabled && (d.status == DeploymentStatus::Ready || d.status == DeploymentStatus::Stopped)) {
            expected.insert(d.id);
        }
    }
    std::set<std::string> actual;
    for (const auto& d : store->listDeploymentsWithAlerting()) {
        actual.insert(d.id);
    }
    EXPECT_EQ(actual, expected);
}

TEST(Deployments, FourWithTwoAlerting)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    for (int i = 0; i < 4; ++i) {
        Deployment d;
        d.id = "d" + std::to_string(i);
        d.alerting.enabled = i < 2 || i == 3;
        d.status = i == 3 ? DeploymentStatus::Terminated : DeploymentStatus::Ready;
        store->putDeployment(d);
    }
    auto list = store->listDeploymentsWithAlerting();
    ASSERT_EQ(list.size(), 2u);
    EXPECT_EQ(test::errorOf([&] { store->getDeployment("ghost"); }), ErrorCode::NotFound);
}

TEST(Deployments, ApplyEventRejectsIllegal)
{
    test::TempDir dir;
    auto store = openMigrated(dir.path());
    store->putDeployment(validating("d1"));
    EXPECT_EQ(test::errorOf([&] { store->applyEvent("d1", LifecycleEvent::Start, nowMs()); }),
        ErrorCode::IllegalTransition);
    EXPECT_EQ(store->getDeployment("d1").status, DeploymentStatus::Validating);
}

TEST(Durability, ReopenSeesCommittedState)
{
    test::TempDir dir;
    {
        auto store = openMigrated(dir.path());
        store->putResource(resource("r1"));
        store->putDeployment(validating("d1"));
        store->reserveResources("d1", {"r1"});
        store->putUser("alice", "hash");
        store->putCredentials("cred-d1", {{"FAAS_EDGE", "token"}});
    }
    Store store(dir.path());
    EXPECT_EQ(store.schemaVersion(), 3);
    EXPECT_EQ(store.getResource("r1").state, ResourceState::Reserved);
    EXPECT_EQ(store.getDeployment("d1").status, DeploymentStatus::Deploying);
    EXPECT_EQ(store.reservations().size(), 1u);
    EXPECT_EQ(store.userPasswordHash("alice"), "hash");
    EXPECT_EQ(store.credentials("cred-d1")->at("FAAS_EDGE"), "token");
}

TEST(Durability, SurvivesCompaction)
{
    test::TempDir dir;
    {
        auto store = openMigrated(dir.path());
        store->putResource(resource("r1"));
        store->putDeployment(validating("d1"));
        store->compact();
        store->reserveResources("d1", {"r1"});
    }
    Store store(dir.path());
    EXPECT_EQ(store.getResource("r1").state, ResourceState::Reserved);
    EXPECT_EQ(store.getDeployment("d1").status, DeploymentStatus::Deploying);
}

TEST(Durability, TornTailIgnored)
{
    test::TempDir dir;
    {
        auto store = openMigrated(dir.path());
        store->putResource(resource("r1"));
    }
    {
        std::ofstream log(dir.path() / "log", std::ios::app | std::ios::binary);
        log << R"({"tx":999,"ops":[{"table":"resources","key":"r2")";
    }
    {
        Store store(dir.path());
        EXPECT_TRUE(store.findResource("r1"));
        EXPECT_FALSE(store.findResource("r2"));
        store.putResource(resource("r3"));
    }
    Store store(dir.path());
    EXPECT_TRUE(store.findResource("r3"));
    EXPECT_FALSE(store.findResource("r2"));
}

TEST(Durability, KillBetweenOperations)
{
    test::TempDir dir;
    openMigrated(dir.path())->putResource(resource("r0"));

    int pipeFds[2];
    ASSERT_EQ(::pipe(pipeFds), 0);
    pid_t child = ::fork();
    ASSERT_GE(child, 0);
    if (child == 0) {
        ::close(pipeFds[0]);
        Store store(dir.path());
        for (int i = 0;; ++i) {
            auto id = "k" + std::to_string(i);
            store.putDeployment(validating(id));
            char ack = 1;
            if (::write(pipeFds[1], &ack, 1) != 1) {
                ::_exit(1);
            }
        }
    }
    ::close(pipeFds[1]);
    int acknowledged = 0;
    char ack;
    while (acknowledged < 200 && ::read(pipeFds[0], &ack, 1) == 1) {
        ++acknowledged;
    }
    ::kill(child, SIGKILL);
    ::waitpid(child, nullptr, 0);
    // Drain acknowledgements written before the kill landed.
    while (::read(pipeFds[0], &ack, 1) == 1) {
        ++acknowledged;
    }
    ::close(pipeFds[0]);

    Store store(dir.path());
    int present = 0;
    while (store.findDeployment("k" + std::to_string(present))) {
        ++present;
    }
    EXPECT_GE(present, acknowledged);
    EXPECT_LE(present, acknowledged + 1);
    EXPECT_EQ(static_cast<int>(store.listDeployments().size()), present);
    EXPECT_TRUE(store.findResource("r0"));
}
