/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <atomic>
#include <mutex>
#include <thread>

#include <gtest/gtest.h>

#include <rm/event_bus.hpp>

#include "support.hpp"

using namespace rm;
using nlohmann::json;

TEST(Publish, FansOutToAllSubscribers)
{
    EventBus bus;
    std::atomic<int> received {0};
    std::vector<EventBus::Subscription> subs;
    for (int i = 0; i < 3; ++i) {
        subs.push_back(bus.subscribe("alerts", [&](const BusMessage&) {
            ++received;
            return json();
        }));
    }
    EXPECT_EQ(bus.publish("alerts", {{"x", 1}}), 3u);
    EXPECT_TRUE(test::eventually([&] { return received == 3; }));
}

TEST(Publish, NoSubscribersAndNoRetention)
{
    EventBus bus;
    EXPECT_EQ(bus.publish("alerts", 1), 0u);
    std::atomic<int> received {0};
    auto sub = bus.subscribe("alerts", [&](const BusMessage&) {
        ++received;
        return json();
    });
    sleepMs(50);
    EXPECT_EQ(received, 0);
}

TEST(Send, RoundRobin)
{
    EventBus bus;
    std::atomic<int> a {0};
    std::atomic<int> b {0};
    auto s1 = bus.subscribe("work", [&](const BusMessage&) {
        ++a;
        return json();
    });
    auto s2 = bus.subscribe("work", [&](const BusMessage&) {
        ++b;
        return json();
    });
    for (int i = 0; i < 4; ++i) {
        bus.send("work", i);
    }
    EXPECT_TRUE(test::eventually([&] { return a + b == 4; }));
    EXPECT_EQ(a, 2);
    EXPECT_EQ(b, 2);
}

TEST(Send, QueuedUntilSubscribed)
{
    EventBus bus;
    bus.send("late", 42);
    std::atomic<int> received {0};
    std::atomic<int> value {0};
    auto sub = bus.subscribe("late", [&](const BusMessage& m) {
        value = m.body.get<int>();
        ++received;
        return json();
    });
    EXPECT_TRUE(test::eventually([&] { return received == 1; }));
    EXPECT_EQ(value, 42);
    sleepMs(30);
    EXPECT_EQ(received, 1);
}

TEST(Send, QueueFullAtBoundary)
{
    EventBus bus;
    for (int i = 0; i < 1024; ++i) {
        bus.send("nobody", i);
    }
    EXPECT_EQ(test::errorOf([&] { bus.send("nobody", 1024); }), ErrorCode::QueueFull);
}

TEST(Send, PerSenderFifo)
{
    EventBus bus;
    std::mutex mutex;
    std::map<int, std::vector<int>> seen;
    auto sub = bus.subscribe("ordered", [&](const BusMessage& m) {
        std::lock_guard lock(mutex);
        seen[m.body["sender"].get<int>()].push_back(m.body["seq"].get<int>());
        return json();
    });
    std::vector<std::thread> senders;
    for (int s = 0; s < 4; ++s) {
        senders.emplace_back([&, s] {
            for (int i = 0; i < 200; ++i) {
                bus.send("ordered", {{"sender", s}, {"seq", i}});
            }
        });
    }
    for (auto& t : senders) {
        t.join();
    }
    EXPECT_TRUE(test::eventually([&] {
        std::lock_guard lock(mutex);
        std::size_t total = 0;
        for (auto& [s, v] : seen) {
            total += v.size();
        }
        return total == 800;
    }));
    for (auto& [s, v] : seen) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            ASSERT_EQ(v[i], static_cast<int>(i));
        }
    }
}

TEST(Request, EchoReply)
{
    EventBus bus;
    auto sub = bus.subscribe("echo", [](const BusMessage& m) { return m.body; });
    json x = {{"a", {1, 2, 3}}};
    EXPECT_EQ(bus.request("echo", x, 1000), x);
}

TEST(Request, Timeout)
{
    EventBus bus;
    auto sub = bus.subscribe("slow", [](const BusMessage&) {
        sleepMs(2000);
        return json();
    });
    double start = steadyMs();
    EXPECT_EQ(test::errorOf([&] { bus.request("slow", 1, 100); }), ErrorCode::Timeout);
    EXPECT_LT(steadyMs() - start, 1000);
}

TEST(Request, NoHandler)
{
    EventBus bus;
    EXPECT_EQ(test::errorOf([&] { bus.request("nowhere", 1, 100); }), ErrorCode::NoHandler);
}

TEST(Request, NonPositiveTimeoutRejected)
{
    EventBus bus;
    auto sub = bus.subscribe("echo", [](const BusMessage& m) { return m.body; });
    EXPECT_EQ(test::errorOf([&] { bus.request("echo", 1, 0); }), ErrorCode::InvalidArgument);
}

TEST(Isolation, HandlerErrorBecomesReplyError)
{
    EventBus bus;
    auto typed = bus.subscribe("typed", [](const BusMessage&) -> json {
        throw Error(ErrorCode::ResourceConflict, "taken", {{"ids", {"r1"}}});
    });
    auto untyped = bus.subscribe("untyped", [](const BusMessage&) -> json { throw std::runtime_error("boom"); });
    try {
        bus.request("typed", 1, 1000);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ResourceConflict);
        EXPECT_EQ(e.details()["ids"][0], "r1");
    }
    EXPECT_EQ(test::errorOf([&] { bus.request("untyped", 1, 1000); }), ErrorCode::Internal);
}

TEST(Isolation, PublishHandlerErrorDoesNotEscape)
{
    EventBus bus;
    std::atomic<int> after {0};
    auto bad = bus.subscribe("t", [](const BusMessage&) -> json { throw std::runtime_error("boom"); });
    auto good = bus.subscribe("t", [&](const BusMessage&) {
        ++after;
        return json();
    });
    EXPECT_EQ(bus.publish("t", 1), 2u);
    EXPECT_EQ(bus.publish("t", 2), 2u);
    EXPECT_TRUE(test::eventually([&] { return after == 2; }));
}

TEST(Actor, HandlerRunsOneAtATime)
{
    EventBus bus;
    std::atomic<int> inside {0};
    std::atomic<int> maxInside {0};
    std::atomic<int> done {0};
    auto sub = bus.subscribe("actor", [&](const BusMessage&) {
        int now = ++inside;
        int prev = maxInside.load();
        while (now > prev && !maxInside.compare_exchange_weak(prev, now)) {
        }
        sleepMs(1);
        --inside;
        ++done;
        return json();
    });
    std::vector<std::thread> threads;
    for (int i = 0; i < 4; ++i) {
        threads.emplace_back([&] {
            for (int k = 0; k < 10; ++k) {
                bus.publish("actor", k);
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    EXPECT_TRUE(test::eventually([&] { return done == 40; }));
    EXPECT_EQ(maxInside, 1);
}

TEST(Subscription, UnsubscribeStopsDelivery)
{
    EventBus bus;
    std::atomic<int> received {0};
    auto sub = bus.subscribe("x", [&](const BusMessage&) {
        ++received;
        return json();
    });
    EXPECT_EQ(bus.subscriberCount("x"), 1u);
    sub.unsubscribe();
    EXPECT_EQ(bus.subscriberCount("x"), 0u);
    EXPECT_EQ(bus.publish("x", 1), 0u);
}
