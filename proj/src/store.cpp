/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/store.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include <spdlog/spdlog.h>

namespace rm {

namespace fs = std::filesystem;

namespace {

constexpr const char* cResources = "resources";
constexpr const char* cDeployments = "deployments";
constexpr const char* cReservations = "reservations";
constexpr const char* cUsers = "users";
constexpr const char* cCredentials = "credentials";

struct Statement {
    bool create;
    std::string table;
};

std::vector<Statement> parseScript(int version, const std::string& script)
{
    std::vector<Statement> statements;
    std::istringstream in(script);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream words(line);
        std::string verb, object, table, extra;
        words >> verb;
        if (verb.empty() || verb.rfind("--", 0) == 0) {
            continue;
        }
        words >> object >> table >> extra;
        if ((verb != "create" && verb != "drop") || object != "table" || table.empty() || !extra.empty()) {
            throw Error(ErrorCode::MigrationFailed, "migration " + std::to_string(version) + ": bad statement '" + line + "'",
                {{"version", version}, {"cause", line}});
        }
        statements.push_back({verb == "create", table});
    }
    return statements;
}

std::string readFile(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream content;
    content << in.rdbuf();
    return content.str();
}

void writeFileAtomic(const fs::path& path, const std::string& content)
{
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorCode::StoreError, "cannot write " + tmp.string());
        }
        out << content;
        out.flush();
        if (!out) {
            throw Error(ErrorCode::StoreError, "cannot write " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

} // namespace

void to_json(nlohmann::json& j, const Reservation& r)
{
    j = nlohmann::json {
        {"deploymentId", r.deploymentId}, {"resourceIds", r.resourceIds}, {"committedAtMs", r.committedAtMs}};
}

void from_json(const nlohmann::json& j, Reservation& r)
{
    r.deploymentId = j.at("deploymentId").get<std::string>();
    r.resourceIds = j.at("resourceIds").get<std::set<std::string>>();
    r.committedAtMs = j.at("committedAtMs").get<TimestampMs>();
}

const std::map<int, std::string>& Store::builtinMigrations()
{
    static const std::map<int, std::string> migrations {
        {1, "-- core tables\ncreate table resources\ncreate table deployments\n"},
        {2, "create table reservations\n"},
        {3, "create table users\ncreate table credentials\n"},
    };
    return migrations;
}

Store::Store(fs::path directory)
    : Store(std::move(directory), Options {})
{
}

Store::Store(fs::path directory, Options options)
    : mDirectory(std::move(directory))
    , mOptions(std::move(options))
{
    if (mOptions.migrations.empty()) {
        mOptions.migrations = builtinMigrations();
    }

    std::error_code ec;
    fs::create_directories(mDirectory, ec);
    if (ec) {
        throw Error(ErrorCode::StoreError, "cannot create store directory " + mDirectory.string() + ": " + ec.message());
    }

    mLogFd = ::open((mDirectory / "log").c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (mLogFd < 0) {
        throw Error(ErrorCode::StoreError, "cannot open store log in " + mDirectory.string() + ": " + std::strerror(errno));
    }

    load();
}

Store::~Store()
{
    if (mLogFd >= 0) {
        ::close(mLogFd);
    }
}

void Store::load()
{
    fs::path versionFile = mDirectory / "schema_version";
    if (fs::exists(versionFile)) {
        std::string text = readFile(versionFile);
        try {
            mSchemaVersion = std::stoi(text);
        } catch (const std::exception&) {
            throw Error(ErrorCode::StoreError, "corrupt schema_version file");
        }
    }
    for (int v = 1; v <= mSchemaVersion; ++v) {
        auto it = mOptions.migrations.find(v);
        if (it == mOptions.migrations.end()) {
            throw Error(ErrorCode::StoreError, "store is at version " + std::to_string(mSchemaVersion)
                    + " but no script exists for version " + std::to_string(v));
        }
        for (const auto& statement : parseScript(v, it->second)) {
            if (statement.create) {
                mTables.insert(statement.table);
            } else {
                mTables.erase(statement.table);
            }
        }
    }

    fs::path snapshotFile = mDirectory / "snapshot.json";
    if (fs::exists(snapshotFile)) {
        auto snapshot = nlohmann::json::parse(readFile(snapshotFile));
        mLastTx = snapshot.at("lastTx").get<std::uint64_t>();
        for (const auto& [table, rows] : snapshot.at("tables").items()) {
            for (const auto& [key, value] : rows.items()) {
                replayOp({{"t", table}, {"k", key}, {"v", value}});
            }
        }
    }

    std::ifstream log(mDirectory / "log", std::ios::binary);
    std::string line;
    std::streamoff goodOffset = 0;
    while (std::getline(log, line)) {
        bool complete = !log.eof();
        nlohmann::json tx;
        try {
            if (!complete) {
                throw std::runtime_error("torn line");
            }
            tx = nlohmann::json::parse(line);
        } catch (const std::exception&) {
            if (log.peek() == EOF) {
                // A write interrupted by process death leaves at most one partial trailing line.
                spdlog::warn("store: discarding incomplete trailing log record");
                if (::ftruncate(mLogFd, goodOffset) != 0) {
                    throw Error(ErrorCode::StoreError, "cannot truncate torn log record");
                }
                break;
            }
            throw Error(ErrorCode::StoreError, "corrupt store log record");
        }
        goodOffset = log.tellg();
        if (tx.contains("drop")) {
            std::string table = tx["drop"].get<std::string>();
            if (table == cResources) {
                mResources.clear();
            } else if (table == cDeployments) {
                mDeployments.clear();
            } else if (table == cReservations) {
                mReservations.clear();
            } else if (table == cUsers) {
                mUsers.clear();
            } else if (table == cCredentials) {
                mCredentials.clear();
            }
            continue;
        }
        auto txId = tx.at("tx").get<std::uint64_t>();
        if (txId <= mLastTx) {
            continue;
        }
        for (const auto& op : tx.at("ops")) {
            replayOp(op);
        }
        mLastTx = txId;
        ++mTxSinceSnapshot;
    }
}

void Store::replayOp(const nlohmann::json& op)
{
    const std::string table = op.at("t").get<std::string>();
    const std::string key = op.at("k").get<std::string>();
    bool erase = op.value("del", false);

    if (table == cResources) {
        if (erase) {
            mResources.erase(key);
        } else {
            mResources[key] = op.at("v").get<ResourceRecord>();
        }
    } else if (table == cDeployments) {
        if (erase) {
            mDeployments.erase(key);
        } else {
            mDeployments[key] = op.at("v").get<Deployment>();
        }
    } else if (table == cReservations) {
        if (erase) {
            mReservations.erase(key);
        } else {
            mReservations[key] = op.at("v").get<Reservation>();
        }
    } else if (table == cUsers) {
        if (erase) {
            mUsers.erase(key);
        } else {
            mUsers[key] = op.at("v").get<std::string>();
        }
    } else if (table == cCredentials) {
        if (erase) {
            mCredentials.erase(key);
        } else {
            mCredentials[key] = op.at("v");
        }
    } else {
        throw Error(ErrorCode::StoreError, "unknown table '" + table + "' in store log");
    }
}

int Store::schemaVersion() const
{
    std::shared_lock lock(mMutex);
    return mSchemaVersion;
}

std::vector<int> Store::migrate(int targetVersion)
{
    std::unique_lock lock(mMutex);

    if (targetVersion < mSchemaVersion) {
        throw Error(ErrorCode::MigrationFailed,
            "downgrade from " + std::to_string(mSchemaVersion) + " to " + std::to_string(targetVersion) + " is not supported",
            {{"version", targetVersion}, {"cause", "downgrade"}});
    }

    std::vector<int> applied;
    for (int v = mSchemaVersion + 1; v <= targetVersion; ++v) {
        auto it = mOptions.migrations.find(v);
        if (it == mOptions.migrations.end()) {
            throw Error(ErrorCode::MigrationFailed, "no migration script for version " + std::to_string(v),
                {{"version", v}, {"cause", "missing script"}});
        }
        applyScript(v, it->second);
        applied.push_back(v);
        spdlog::info("store: applied migration {}", v);
    }
    return applied;
}

void Store::applyScript(int version, const std::string& script)
{
    auto statements = parseScript(version, script);

    auto tables = mTables;
    std::vector<std::string> dropped;
    for (const auto& statement : statements) {
        if (statement.create) {
            if (tables.count(statement.table)) {
                throw Error(ErrorCode::MigrationFailed, "table '" + statement.table + "' already exists",
                    {{"version", version}, {"cause", "duplicate table"}});
            }
            tables.insert(statement.table);
        } else {
            if (!tables.erase(statement.table)) {
                throw Error(ErrorCode::MigrationFailed, "table '" + statement.table + "' does not exist",
                    {{"version", version}, {"cause", "unknown table"}});
            }
            dropped.push_back(statement.table);
        }
    }

    for (const auto& table : dropped) {
        writeLogLine(nlohmann::json {{"drop", table}}.dump());
        if (table == cResources) {
            mResources.clear();
        } else if (table == cDeployments) {
            mDeployments.clear();
        } else if (table == cReservations) {
            mReservations.clear();
        } else if (table == cUsers) {
            mUsers.clear();
        } else if (table == cCredentials) {
            mCredentials.clear();
        }
    }

    writeSchemaVersionLocked(version);
    mTables = std::move(tables);
    mSchemaVersion = version;
}

void Store::writeSchemaVersionLocked(int version)
{
    writeFileAtomic(mDirectory / "schema_version", std::to_string(version) + "\n");
}

void Store::requireTable(const std::string& table) const
{
    if (!mTables.count(table)) {
        throw Error(ErrorCode::StoreError, "table '" + table + "' does not exist (schema version "
                + std::to_string(mSchemaVersion) + ")");
    }
}

void Store::writeLogLine(const std::string& line)
{
    std::string record = line + "\n";
    const char* data = record.data();
    std::size_t left = record.size();
    while (left > 0) {
        ssize_t written = ::write(mLogFd, data, left);
        if (written < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw Error(ErrorCode::StoreError, std::string("store log write failed: ") + std::strerror(errno));
        }
        data += written;
        left -= static_cast<std::size_t>(written);
    }
    if (mOptions.syncOnCommit) {
        ::fdatasync(mLogFd);
    }
}

void Store::commit(std::vector<Op> ops)
{
    nlohmann::json tx;
    tx["tx"] = mLastTx + 1;
    tx["ops"] = nlohmann::json::array();
    for (const auto& op : ops) {
        nlohmann::json entry {{"t", op.table}, {"k", op.key}};
        if (op.value) {
            entry["v"] = *op.value;
        } else {
            entry["del"] = true;
        }
        tx["ops"].push_back(std::move(entry));
    }

    // Log first: if the write fails, memory is untouched and the caller sees the error.
    writeLogLine(tx.dump());
    for (const auto& entry : tx["ops"]) {
        replayOp(entry);
    }
    ++mLastTx;
    ++mTxSinceSnapshot;

    if (mOptions.snapshotEvery > 0 && mTxSinceSnapshot >= mOptions.snapshotEvery) {
        writeSnapshotLocked();
    }
}

void Store::writeSnapshotLocked()
{
    nlohmann::json tables;
    tables[cResources] = nlohmann::json::object();
    for (const auto& [id, r] : mResources) {
        tables[cResources][id] = r;
    }
    tables[cDeployments] = nlohmann::json::object();
    for (const auto& [id, d] : mDeployments) {
        tables[cDeployments][id] = d;
    }
    tables[cReservations] = nlohmann::json::object();
    for (const auto& [id, r] : mReservations) {
        tables[cReservations][id] = r;
    }
    tables[cUsers] = mUsers;
    tables[cCredentials] = mCredentials;

    writeFileAtomic(mDirectory / "snapshot.json", nlohmann::json {{"lastTx", mLastTx}, {"tables", tables}}.dump());
    if (::ftruncate(mLogFd, 0) != 0) {
        throw Error(ErrorCode::StoreError, "cannot truncate store log after snapshot");
    }
    mTxSinceSnapshot = 0;
}

void Store::compact()
{
    std::unique_lock lock(mMutex);
    writeSnapshotLocked();
}

Store::Op Store::resourceOp(const ResourceRecord& r) const
{
    return {cResources, r.id, nlohmann::json(r)};
}

Store::Op Store::deploymentOp(const Deployment& d) const
{
    return {cDeployments, d.id, nlohmann::json(d)};
}

/*
 * Resources.
 */

void Store::putResource(const ResourceRecord& resource)
{
    std::unique_lock lock(mMutex);
    requireTable(cResources);

    ResourceRecord record = resource;
    if (auto it = mResources.find(resource.id); it != mResources.end()) {
        record.state = it->second.state;
        record.deploymentId = it->second.deploymentId;
    } else {
        record.state = ResourceState::Available;
        record.deploymentId.reset();
    }
    record.validate();
    commit({resourceOp(record)});
}

ResourceRecord Store::getResource(const ResourceId& id) const
{
    if (auto r = findResource(id)) {
        return *r;
    }
    throw Error(ErrorCode::NotFound, "resource '" + id + "' not found", {{"id", id}});
}

std::optional<ResourceRecord> Store::findResource(const ResourceId& id) const
{
    std::shared_lock lock(mMutex);
    requireTable(cResources);
    if (auto it = mResources.find(id); it != mResources.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::vector<ResourceRecord> Store::listResources() const
{
    std::shared_lock lock(mMutex);
    requireTable(cResources);
    std::vector<ResourceRecord> result;
    result.reserve(mResources.size());
    for (const auto& [id, r] : mResources) {
        result.push_back(r);
    }
    return result;
}

void Store::setResourceState(const ResourceId& id, ResourceState state)
{
    std::unique_lock lock(mMutex);
    requireTable(cResources);
    auto it = mResources.find(id);
    if (it == mResources.end()) {
        throw Error(ErrorCode::NotFound, "resource '" + id + "' not found", {{"id", id}});
    }
    if (it->second.state == state) {
        return;
    }
    if (!isAllowedResourceTransition(it->second.state, state)) {
        throw Error(ErrorCode::IllegalTransition,
            "resource " + id + ": " + std::string(toString(it->second.state)) + " -> " + std::string(toString(state)));
    }
    ResourceRecord record = it->second;
    record.state = state;
    if (state == ResourceState::Available || state == ResourceState::Unreachable) {
        record.deploymentId.reset();
    }
    commit({resourceOp(record)});
}

Reservation Store::reserveResources(const DeploymentId& deploymentId, const std::set<ResourceId>& resourceIds)
{
    if (resourceIds.empty()) {
        throw Error(ErrorCode::InvalidArgument, "reservation requires at least one resource");
    }

    std::unique_lock lock(mMutex);
    requireTable(cResources);
    requireTable(cDeployments);
    requireTable(cReservations);

    auto dep = mDeployments.find(deploymentId);
    if (dep == mDeployments.end()) {
        throw Error(ErrorCode::NotFound, "deployment '" + deploymentId + "' not found", {{"id", deploymentId}});
    }
    if (dep->second.status != DeploymentStatus::Validating) {
        throw Error(ErrorCode::IllegalTransition, "deployment '" + deploymentId + "' is not VALIDATING",
            {{"current", toString(dep->second.status)}, {"event", "resourcesReserved"}});
    }

    std::vector<std::string> conflicts;
    for (const auto& id : resourceIds) {
        auto it = mResources.find(id);
        if (it == mResources.end()) {
            throw Error(ErrorCode::NotFound, "resource '" + id + "' not found", {{"id", id}});
        }
        if (it->second.state != ResourceState::Available) {
            conflicts.push_back(id);
        }
    }
    if (!conflicts.empty()) {
        throw Error(ErrorCode::ResourceConflict, "resources not available", {{"ids", conflicts}});
    }

    Reservation reservation {deploymentId, resourceIds, nowMs()};
    std::vector<Op> ops;
    for (const auto& id : resourceIds) {
        ResourceRecord record = mResources.at(id);
        record.state = ResourceState::Reserved;
        record.deploymentId = deploymentId;
        ops.push_back(resourceOp(record));
    }
    Deployment deployment = dep->second;
    deployment.apply(LifecycleEvent::ResourcesReserved, reservation.committedAtMs);
    ops.push_back(deploymentOp(deployment));
    ops.push_back({cReservations, deploymentId, nlohmann::json(reservation)});

    commit(std::move(ops));
    for (const auto& id : resourceIds) {
        ++mCounters[id].reserved;
    }
    return reservation;
}

std::size_t Store::releaseResources(const DeploymentId& deploymentId)
{
    std::unique_lock lock(mMutex);
    requireTable(cResources);
    requireTable(cReservations);

    if (!mDeployments.count(deploymentId)) {
        throw Error(ErrorCode::NotFound, "deployment '" + deploymentId + "' not found", {{"id", deploymentId}});
    }

    std::vector<Op> ops;
    std::vector<ResourceId> released;
    for (const auto& [id, r] : mResources) {
        if (r.deploymentId == deploymentId
            && (r.state == ResourceState::Reserved || r.state == ResourceState::Deployed)) {
            ResourceRecord record = r;
            record.state = ResourceState::Available;
            record.deploymentId.reset();
            ops.push_back(resourceOp(record));
            released.push_back(id);
        }
    }
    if (mReservations.count(deploymentId)) {
        ops.push_back({cReservations, deploymentId, std::nullopt});
    }
    if (ops.empty()) {
        return 0;
    }

    commit(std::move(ops));
    for (const auto& id : released) {
        ++mCounters[id].released;
    }
    return released.size();
}

void Store::markDeployed(const DeploymentId& deploymentId)
{
    std::unique_lock lock(mMutex);
    requireTable(cResources);

    std::vector<Op> ops;
    for (const auto& [id, r] : mResources) {
        if (r.deploymentId == deploymentId && r.state == ResourceState::Reserved) {
            ResourceRecord record = r;
            record.state = ResourceState::Deployed;
            ops.push_back(resourceOp(record));
        }
    }
    if (!ops.empty()) {
        commit(std::move(ops));
    }
}

void Store::swapResource(const DeploymentId& deploymentId, const ResourceId& from, const ResourceId& to)
{
    std::unique_lock lock(mMutex);
    requireTable(cResources);
    requireTable(cReservations);

    auto oldIt = mResources.find(from);
    auto newIt = mResources.find(to);
    if (oldIt == mResources.end()) {
        throw Error(ErrorCode::NotFound, "resource '" + from + "' not found", {{"id", from}});
    }
    if (newIt == mResources.end()) {
        throw Error(ErrorCode::NotFound, "resource '" + to + "' not found", {{"id", to}});
    }
    if (oldIt->second.deploymentId != deploymentId) {
        throw Error(ErrorCode::InvalidArgument, "resource '" + from + "' is not held by " + deploymentId);
    }
    if (newIt->second.state != ResourceState::Available) {
        throw Error(ErrorCode::ResourceConflict, "resources not available", {{"ids", {to}}});
    }

    ResourceRecord oldRecord = oldIt->second;
    ResourceRecord newRecord = newIt->second;
    newRecord.state = oldRecord.state;
    newRecord.deploymentId = deploymentId;
    oldRecord.state = ResourceState::Available;
    oldRecord.deploymentId.reset();

    std::vector<Op> ops {resourceOp(oldRecord), resourceOp(newRecord)};
    if (auto it = mReservations.find(deploymentId); it != mReservations.end()) {
        Reservation reservation = it->second;
        reservation.resourceIds.erase(from);
        reservation.resourceIds.insert(to);
        ops.push_back({cReservations, deploymentId, nlohmann::json(reservation)});
    }
    if (auto it = mDeployments.find(deploymentId); it != mDeployments.end()) {
        Deployment deployment = it->second;
        for (auto& assignment : deployment.assignments) {
            if (assignment.resourceId == from) {
                assignment.resourceId = to;
            }
        }
        ops.push_back(deploymentOp(deployment));
    }

    commit(std::move(ops));
    ++mCounters[from].released;
    ++mCounters[to].reserved;
}

std::vector<Reservation> Store::reservations() const
{
    std::shared_lock lock(mMutex);
    requireTable(cReservations);
    std::vector<Reservation> result;
    for (const auto& [id, r] : mReservations) {
        result.push_back(r);
    }
    return result;
}

ResourceCounters Store::counters(const ResourceId& id) const
{
    std::shared_lock lock(mMutex);
    if (auto it = mCounters.find(id); it != mCounters.end()) {
        return it->second;
    }
    return {};
}

/*
 * Deployments.
 */

void Store::putDeployment(const Deployment& deployment)
{
    std::unique_lock lock(mMutex);
    requireTable(cDeployments);
    commit({deploymentOp(deployment)});
}

Deployment Store::getDeployment(const DeploymentId& id) const
{
    if (auto d = findDeployment(id)) {
        return *d;
    }
    throw Error(ErrorCode::NotFound, "deployment '" + id + "' not found", {{"id", id}});
}

std::optional<Deployment> Store::findDeployment(const DeploymentId& id) const
{
    std::shared_lock lock(mMutex);
    requireTable(cDeployments);
    if (auto it = mDeployments.find(id); it != mDeployments.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::vector<Deployment> Store::listDeployments() const
{
    std::shared_lock lock(mMutex);
    requireTable(cDeployments);
    std::vector<Deployment> result;
    result.reserve(mDeployments.size());
    for (const auto& [id, d] : mDeployments) {
        result.push_back(d);
    }
    return result;
}

std::vector<Deployment> Store::listDeploymentsWithAlerting() const
{
    std::shared_lock lock(mMutex);
    requireTable(cDeployments);
    std::vector<Deployment> result;
    for (const auto& [id, d] : mDeployments) {
        if (d.alerting.enabled && (d.status == DeploymentStatus::Ready || d.status == DeploymentStatus::Stopped)) {
            result.push_back(d);
        }
    }
    return result;
}

void Store::deleteDeployment(const DeploymentId& id)
{
    std::unique_lock lock(mMutex);
    requireTable(cDeployments);
    if (!mDeployments.count(id)) {
        throw Error(ErrorCode::NotFound, "deployment '" + id + "' not found", {{"id", id}});
    }
    commit({{cDeployments, id, std::nullopt}});
}

Deployment Store::applyEvent(const DeploymentId& id, LifecycleEvent event, TimestampMs atMs)
{
    return updateDeployment(id, [&](Deployment& d) { d.apply(event, atMs); });
}

Deployment Store::updateDeployment(const DeploymentId& id, const std::function<void(Deployment&)>& mutate)
{
    std::unique_lock lock(mMutex);
    requireTable(cDeployments);
    auto it = mDeployments.find(id);
    if (it == mDeployments.end()) {
        throw Error(ErrorCode::NotFound, "deployment '" + id + "' not found", {{"id", id}});
    }
    Deployment deployment = it->second;
    mutate(deployment);
    commit({deploymentOp(deployment)});
    return deployment;
}

/*
 * Users and credentials.
 */

void Store::putUser(const std::string& name, const std::string& passwordHash)
{
    std::unique_lock lock(mMutex);
    requireTable(cUsers);
    commit({{cUsers, name, nlohmann::json(passwordHash)}});
}

std::optional<std::string> Store::userPasswordHash(const std::string& name) const
{
    std::shared_lock lock(mMutex);
    requireTable(cUsers);
    if (auto it = mUsers.find(name); it != mUsers.end()) {
        return it->second;
    }
    return std::nullopt;
}

void Store::putCredentials(const std::string& ref, const nlohmann::json& credentials)
{
    std::unique_lock lock(mMutex);
    requireTable(cCredentials);
    commit({{cCredentials, ref, credentials}});
}

std::optional<nlohmann::json> Store::credentials(const std::string& ref) const
{
    std::shared_lock lock(mMutex);
    requireTable(cCredentials);
    if (auto it = mCredentials.find(ref); it != mCredentials.end()) {
        return it->second;
    }
    return std::nullopt;
}

} // namespace rm
