/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_EVENT_BUS_HPP_
#define RM_EVENT_BUS_HPP_

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include <rm/util.hpp>

namespace rm {

struct BusMessage {
    std::string address;
    nlohmann::json body;
    std::optional<std::string> correlationId;
    TimestampMs sentAtMs {0};
};

/**
 * In-process message bus with publish/subscribe, point-to-point and
 * request/reply delivery.
 *
 * Every subscription is a small actor: its handler never runs concurrently with
 * itself, messages reach it in enqueue order, and different subscriptions run in
 * parallel on the bus worker pool. The handler's return value is the reply for
 * request(); it is ignored for publish() and send(). Exceptions thrown by a
 * handler are turned into error replies (request) or logged (publish/send).
 */
class EventBus {
public:
    using Handler = std::function<nlohmann::json(const BusMessage&)>;

    struct Options {
        std::size_t workers {8};
        /// Per-address buffer for send() while the address has no subscriber.
        std::size_t queueCapacity {1024};
    };

    class Subscription {
    public:
        Subscription() = default;
        Subscription(Subscription&& other) noexcept;
        Subscription& operator=(Subscription&& other) noexcept;
        ~Subscription();

        void unsubscribe();
        bool active() const noexcept { return mBus != nullptr; }

    private:
        friend class EventBus;
        Subscription(EventBus* bus, std::string address, std::uint64_t id);

        EventBus* mBus {nullptr};
        std::string mAddress;
        std::uint64_t mId {0};
    };

    EventBus();
    explicit EventBus(Options options);
    ~EventBus();

    EventBus(const EventBus&) = delete;
    EventBus& operator=(const EventBus&) = delete;

    [[nodiscard]] Subscription subscribe(const std::string& address, Handler handler);

    /// Delivers to every current subscriber; returns how many there were.
    std::size_t publish(const std::string& address, nlohmann::json body);

    /// Delivers to one subscriber, round-robin. Buffers while nobody listens;
    /// throws QueueFull once the buffer holds queueCapacity messages.
    void send(const std::string& address, nlohmann::json body);

    /// Sends to one subscriber and waits for its reply. Throws NoHandler, Timeout,
    /// or the error the handler raised.
    nlohmann::json request(const std::string& address, nlohmann::json body, std::int64_t timeoutMs);

    std::size_t subscriberCount(const std::string& address) const;

private:
    struct Mailbox;
    struct Envelope;
    struct AddressEntry;

    void unsubscribe(const std::string& address, std::uint64_t id);
    void enqueue(const std::shared_ptr<Mailbox>& mailbox, Envelope envelope);
    void drain(std::shared_ptr<Mailbox> mailbox);
    std::shared_ptr<Mailbox> pickLocked(AddressEntry& entry);

    Options mOptions;
    mutable std::mutex mMutex;
    std::map<std::string, AddressEntry> mAddresses;
    std::atomic<std::uint64_t> mNextId {1};
    std::unique_ptr<ThreadPool> mPool;
};

} // namespace rm

#endif
