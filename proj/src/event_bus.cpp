/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/event_bus.hpp>

#include <deque>
#include <future>
#include <vector>

#include <spdlog/spdlog.h>

#include <rm/error.hpp>

namespace rm {

namespace {

constexpr const char* cErrorKey = "__error";
constexpr std::size_t cDrainBatch = 64;

nlohmann::json errorReply(ErrorCode code, const std::string& message, const nlohmann::json& details)
{
    return {{cErrorKey, {{"kind", toString(code)}, {"message", message}, {"details", details}}}};
}

} // namespace

struct EventBus::Envelope {
    BusMessage message;
    std::shared_ptr<std::promise<nlohmann::json>> reply;
};

struct EventBus::Mailbox {
    std::uint64_t id {0};
    std::string address;
    Handler handler;
    std::mutex mutex;
    std::deque<Envelope> queue;
    bool scheduled {false};
    bool closed {false};
};

struct EventBus::AddressEntry {
    std::vector<std::shared_ptr<Mailbox>> subscribers;
    std::size_t next {0};
    std::deque<Envelope> pending;
};

/*
 * Subscription.
 */

EventBus::Subscription::Subscription(EventBus* bus, std::string address, std::uint64_t id)
    : mBus(bus)
    , mAddress(std::move(address))
    , mId(id)
{
}

EventBus::Subscription::Subscription(Subscription&& other) noexcept
    : mBus(std::exchange(other.mBus, nullptr))
    , mAddress(std::move(other.mAddress))
    , mId(other.mId)
{
}

EventBus::Subscription& EventBus::Subscription::operator=(Subscription&& other) noexcept
{
    if (this != &other) {
        unsubscribe();
        mBus = std::exchange(other.mBus, nullptr);
        mAddress = std::move(other.mAddress);
        mId = other.mId;
    }
    return *this;
}

EventBus::Subscription::~Subscription()
{
    unsubscribe();
}

void EventBus::Subscription::unsubscribe()
{
    if (mBus) {
        mBus->unsubscribe(mAddress, mId);
        mBus = nullptr;
    }
}

/*
 * EventBus.
 */

EventBus::EventBus()
    : EventBus(Options {})
{
}

EventBus::EventBus(Options options)
    : mOptions(options)
    , mPool(std::make_unique<ThreadPool>(options.workers))
{
}

EventBus::~EventBus()
{
    {
        std::lock_guard lock(mMutex);
        for (auto& [address, entry] : mAddresses) {
            for (auto& mailbox : entry.subscribers) {
                std::lock_guard mailboxLock(mailbox->mutex);
                mailbox->closed = true;
            }
        }
    }
    mPool.reset();
}

EventBus::Subscription EventBus::subscribe(const std::string& address, Handler handler)
{
    auto mailbox = std::make_shared<Mailbox>();
    mailbox->id = mNextId++;
    mailbox->address = address;
    mailbox->handler = std::move(handler);

    std::deque<Envelope> backlog;
    {
        std::lock_guard lock(mMutex);
        auto& entry = mAddresses[address];
        entry.subscribers.push_back(mailbox);
        backlog.swap(entry.pending);
    }
    for (auto& envelope : backlog) {
        enqueue(mailbox, std::move(envelope));
    }

    return Subscription(this, address, mailbox->id);
}

void EventBus::unsubscribe(const std::string& address, std::uint64_t id)
{
    std::shared_ptr<Mailbox> removed;
    {
        std::lock_guard lock(mMutex);
        auto it = mAddresses.find(address);
        if (it == mAddresses.end()) {
            return;
        }
        auto& subscribers = it->second.subscribers;
        for (auto sub = subscribers.begin(); sub != subscribers.end(); ++sub) {
            if ((*sub)->id == id) {
                removed = *sub;
                subscribers.erase(sub);
                break;
            }
        }
    }
    if (!removed) {
        return;
    }

    std::deque<Envelope> orphans;
    {
        std::lock_guard lock(removed->mutex);
        removed->closed = true;
        orphans.swap(removed->queue);
    }
    for (auto& envelope : orphans) {
        if (envelope.reply) {
            envelope.reply->set_value(errorReply(ErrorCode::NoHandler, "subscriber left " + address, nullptr));
        }
    }
}

std::size_t EventBus::subscriberCount(const std::string& address) const
{
    std::lock_guard lock(mMutex);
    auto it = mAddresses.find(address);
    return it == mAddresses.end() ? 0 : it->second.subscribers.size();
}

std::shared_ptr<EventBus::Mailbox> EventBus::pickLocked(AddressEntry& entry)
{
    if (entry.subscribers.empty()) {
        return nullptr;
    }
    auto mailbox = entry.subscribers[entry.next % entry.subscribers.size()];
    ++entry.next;
    return mailbox;
}

void EventBus::enqueue(const std::shared_ptr<Mailbox>& mailbox, Envelope envelope)
{
    bool schedule = false;
    {
        std::lock_guard lock(mailbox->mutex);
        if (mailbox->closed) {
            if (envelope.reply) {
                envelope.reply->set_value(
                    errorReply(ErrorCode::NoHandler, "subscriber left " + mailbox->address, nullptr));
            }
            return;
        }
        mailbox->queue.push_back(std::move(envelope));
        if (!mailbox->scheduled) {
            mailbox->scheduled = true;
            schedule = true;
        }
    }
    if (schedule) {
        mPool->post([this, mailbox] { drain(mailbox); });
    }
}

void EventBus::drain(std::shared_ptr<Mailbox> mailbox)
{
    for (std::size_t processed = 0; processed < cDrainBatch; ++processed) {
        Envelope envelope;
        {
            std::lock_guard lock(mailbox->mutex);
            if (mailbox->queue.empty() || mailbox->closed) {
                mailbox->scheduled = false;
                return;
            }
            envelope = std::move(mailbox->queue.front());
            mailbox->queue.pop_front();
        }

        nlohmann::json reply;
        try {
            reply = mailbox->handler(envelope.message);
        } catch (const Error& e) {
            if (!envelope.reply) {
                spdlog::warn("bus handler on '{}' failed: {}", mailbox->address, e.what());
            }
            reply = errorReply(e.code(), e.what(), e.details());
        } catch (const std::exception& e) {
            if (!envelope.reply) {
                spdlog::warn("bus handler on '{}' failed: {}", mailbox->address, e.what());
            }
            reply = errorReply(ErrorCode::Internal, e.what(), nullptr);
        }
        if (envelope.reply) {
            envelope.reply->set_value(std::move(reply));
        }
    }

    // Yield the worker so one busy subscription cannot starve the rest.
    mPool->post([this, mailbox] { drain(mailbox); });
}

std::size_t EventBus::publish(const std::string& address, nlohmann::json body)
{
    std::vector<std::shared_ptr<Mailbox>> targets;
    {
        std::lock_guard lock(mMutex);
        auto it = mAddresses.find(address);
        if (it != mAddresses.end()) {
            targets = it->second.subscribers;
        }
    }
    BusMessage message {address, std::move(body), std::nullopt, nowMs()};
    for (const auto& mailbox : targets) {
        enqueue(mailbox, Envelope {message, nullptr});
    }
    return targets.size();
}

void EventBus::send(const std::string& address, nlohmann::json body)
{
    BusMessage message {address, std::move(body), std::nullopt, nowMs()};
    std::shared_ptr<Mailbox> target;
    {
        std::lock_guard lock(mMutex);
        auto& entry = mAddresses[address];
        target = pickLocked(entry);
        if (!target) {
            if (entry.pending.size() >= mOptions.queueCapacity) {
                throw Error(ErrorCode::QueueFull, "queue for '" + address + "' is full",
                    {{"address", address}, {"capacity", mOptions.queueCapacity}});
            }
            entry.pending.push_back(Envelope {std::move(message), nullptr});
            return;
        }
    }
    enqueue(target, Envelope {std::move(message), nullptr});
}

nlohmann::json EventBus::request(const std::string& address, nlohmann::json body, std::int64_t timeoutMs)
{
    if (timeoutMs <= 0) {
        throw Error(ErrorCode::InvalidArgument, "request timeout must be positive");
    }

    std::shared_ptr<Mailbox> target;
    {
        std::lock_guard lock(mMutex);
        auto it = mAddresses.find(address);
        if (it != mAddresses.end()) {
            target = pickLocked(it->second);
        }
    }
    if (!target) {
        throw Error(ErrorCode::NoHandler, "no handler for '" + address + "'", {{"address", address}});
    }

    auto reply = std::make_shared<std::promise<nlohmann::json>>();
    auto future = reply->get_future();
    BusMessage message {address, std::move(body), "c" + std::to_string(mNextId++), nowMs()};
    enqueue(target, Envelope {std::move(message), reply});

    if (future.wait_for(std::chrono::milliseconds(timeoutMs)) != std::future_status::ready) {
        throw Error(ErrorCode::Timeout, "request to '" + address + "' timed out after " + std::to_string(timeoutMs) + " ms",
            {{"address", address}, {"timeoutMs", timeoutMs}});
    }

    nlohmann::json result = future.get();
    if (result.is_object() && result.contains(cErrorKey)) {
        const auto& error = result[cErrorKey];
        throw Error(errorCodeFromString(error.value("kind", std::string("Internal"))),
            error.value("message", std::string("handler failed")), error.value("details", nlohmann::json()));
    }
    return result;
}

} // namespace rm
