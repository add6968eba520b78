/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_STORE_HPP_
#define RM_STORE_HPP_

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include <rm/domain.hpp>

namespace rm {

struct Reservation {
    DeploymentId deploymentId;
    std::set<ResourceId> resourceIds;
    TimestampMs committedAtMs {0};
};

void to_json(nlohmann::json& j, const Reservation& r);
void from_json(const nlohmann::json& j, Reservation& r);

/// Per-resource bookkeeping since the store was opened.
struct ResourceCounters {
    std::size_t reserved {0};
    std::size_t released {0};
};

/**
 * Embedded, file-backed transactional store.
 *
 * Layout of the store directory:
 *   schema_version  decimal integer, newline terminated
 *   log             append-only, one JSON transaction per line
 *   snapshot.json   full table image plus the id of the last folded transaction
 *
 * All mutations run under a single writer lock and are applied to memory and
 * appended to the log as one write, so any interleaving of concurrent callers is
 * equivalent to the serial order in which they took the lock. Conflicting
 * reservations fail immediately (first committer wins). Reads share the lock and
 * see the last committed state.
 */
class Store {
public:
    static constexpr int cLatestSchemaVersion = 3;

    struct Options {
        /// fdatasync after every commit. Off by default: the durability contract is
        /// process death, not power loss.
        bool syncOnCommit {false};
        /// Number of transactions between snapshots; 0 disables automatic snapshots.
        std::size_t snapshotEvery {1000};
        /// Migration scripts by version. Empty means the built-in set.
        std::map<int, std::string> migrations;
    };

    /// Opens (creating when missing) the store in `directory` and replays it.
    explicit Store(std::filesystem::path directory);
    Store(std::filesystem::path directory, Options options);
    ~Store();

    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    const std::filesystem::path& directory() const noexcept { return mDirectory; }

    /*
     * Schema.
     */

    int schemaVersion() const;

    /// Applies scripts current+1..targetVersion in order, each atomically. Returns the
    /// versions applied. Throws MigrationFailed for downgrades, missing scripts or a
    /// failing script, leaving the store at the last successful version.
    std::vector<int> migrate(int targetVersion);

    static const std::map<int, std::string>& builtinMigrations();

    /*
     * Resources.
     */

    /// Registers a new resource or updates the static fields of an existing one.
    void putResource(const ResourceRecord& resource);
    ResourceRecord getResource(const ResourceId& id) const;
    std::optional<ResourceRecord> findResource(const ResourceId& id) const;
    std::vector<ResourceRecord> listResources() const;

    /// Moves a resource along an allowed resource-state edge; used for reachability changes.
    void setResourceState(const ResourceId& id, ResourceState state);

    /**
     * Atomically flips every listed resource AVAILABLE->RESERVED, records the
     * reservation and advances the deployment VALIDATING->DEPLOYING. Either all of
     * it commits or nothing changes.
     */
    Reservation reserveResources(const DeploymentId& deploymentId, const std::set<ResourceId>& resourceIds);

    /// Returns every resource held by the deployment to AVAILABLE. Idempotent.
    std::size_t releaseResources(const DeploymentId& deploymentId);

    /// RESERVED->DEPLOYED for all resources held by the deployment.
    void markDeployed(const DeploymentId& deploymentId);

    /// Moves one resource of a deployment to another AVAILABLE resource, releasing the old one.
    void swapResource(const DeploymentId& deploymentId, const ResourceId& from, const ResourceId& to);

    std::vector<Reservation> reservations() const;
    ResourceCounters counters(const ResourceId& id) const;

    /*
     * Deployments.
     */

    void putDeployment(const Deployment& deployment);
    Deployment getDeployment(const DeploymentId& id) const;
    std::optional<Deployment> findDeployment(const DeploymentId& id) const;
    std::vector<Deployment> listDeployments() const;

    /// Deployments with alerting enabled whose status is READY or STOPPED.
    std::vector<Deployment> listDeploymentsWithAlerting() const;

    void deleteDeployment(const DeploymentId& id);

    /// Applies a lifecycle event atomically; throws IllegalTransition when undefined.
    Deployment applyEvent(const DeploymentId& id, LifecycleEvent event, TimestampMs atMs);

    /// Read-modify-write of one deployment under the writer lock.
    Deployment updateDeployment(const DeploymentId& id, const std::function<void(Deployment&)>& mutate);

    /*
     * Users and credentials.
     */

    void putUser(const std::string& name, const std::string& passwordHash);
    std::optional<std::string> userPasswordHash(const std::string& name) const;

    void putCredentials(const std::string& ref, const nlohmann::json& credentials);
    std::optional<nlohmann::json> credentials(const std::string& ref) const;

    /// Writes a snapshot and truncates the log.
    void compact();

private:
    struct Op {
        std::string table;
        std::string key;
        std::optional<nlohmann::json> value;
    };

    void load();
    void replayOp(const nlohmann::json& op);
    void applyScript(int version, const std::string& script);
    void requireTable(const std::string& table) const;
    void commit(std::vector<Op> ops);
    void writeLogLine(const std::string& line);
    void writeSnapshotLocked();
    void writeSchemaVersionLocked(int version);

    Op resourceOp(const ResourceRecord& r) const;
    Op deploymentOp(const Deployment& d) const;

    std::filesystem::path mDirectory;
    Options mOptions;
    int mLogFd {-1};

    mutable std::shared_mutex mMutex;
    int mSchemaVersion {0};
    std::set<std::string> mTables;
    std::uint64_t mLastTx {0};
    std::size_t mTxSinceSnapshot {0};

    std::map<ResourceId, ResourceRecord> mResources;
    std::map<DeploymentId, Deployment> mDeployments;
    std::map<DeploymentId, Reservation> mReservations;
    std::map<std::string, std::string> mUsers;
    std::map<std::string, nlohmann::json> mCredentials;
    std::map<ResourceId, ResourceCounters> mCounters;
};

} // namespace rm

#endif
