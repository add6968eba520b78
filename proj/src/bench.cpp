/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/bench.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <latch>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <sys/resource.h>
#include <unistd.h>

#include <httplib.h>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

namespace rm::bench {

namespace {

constexpr std::size_t cMaxIdleConnections = 16;

// Resources and artifacts of each named composition in the reference testbed.
const std::map<std::string, std::vector<Assignment>>& compositions()
{
    static const std::map<std::string, std::vector<Assignment>> cCompositions {
        {"faasEdge", {{"r1", "function1"}}},
        {"container", {{"r4", "service1"}}},
        {"serverless", {{"r12", "function1"}}},
        {"vm", {{"r11", "function1"}}},
        {"all",
            {{"r1", "function1"}, {"r2", "function1"}, {"r3", "function1"}, {"r4", "service1"}, {"r10", "service1"},
                {"r11", "function1"}, {"r12", "function1"}}},
    };
    return cCompositions;
}

// Resource used by each Scenario 3 target.
const std::map<std::string, Assignment>& invocationTargets()
{
    static const std::map<std::string, Assignment> cTargets {
        {"serverless", {"r12", "function1"}},
        {"faasEdge", {"r2", "function1"}},
        {"vm", {"r11", "function1"}},
    };
    return cTargets;
}

std::string replicaId(const std::string& id, int instance)
{
    return instance == 0 ? id : id + "-" + std::to_string(instance + 1);
}

// Runs `count` tasks on `workers` threads; task i gets index i.
template <typename Fn>
void parallelFor(std::size_t count, std::size_t workers, Fn fn)
{
    workers = std::max<std::size_t>(1, std::min(workers, count));
    std::atomic<std::size_t> next {0};
    std::latch start(static_cast<std::ptrdiff_t>(workers));
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            start.arrive_and_wait();
            for (std::size_t i = next++; i < count; i = next++) {
                fn(i);
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
}

class RssSampler {
public:
    explicit RssSampler(double periodMs)
    {
        mThread = std::thread([this, periodMs] {
            std::unique_lock lock(mMutex);
            while (!mStop) {
                mSamples.push_back(residentMb());
                mCond.wait_for(lock, std::chrono::duration<double, std::milli>(periodMs), [this] { return mStop; });
            }
        });
    }

    ~RssSampler() { stop(); }

    std::vector<double> stop()
    {
        {
            std::lock_guard lock(mMutex);
            mStop = true;
        }
        mCond.notify_all();
        if (mThread.joinable()) {
            mThread.join();
        }
        return mSamples;
    }

private:
    std::mutex mMutex;
    std::condition_variable mCond;
    bool mStop {false};
    std::vector<double> mSamples;
    std::thread mThread;
};

std::string csvField(const std::string& text)
{
    if (text.find_first_of(",\"\n") == std::string::npos) {
        return text;
    }
    std::string out = "\"";
    for (char c : text) {
        out += c;
        if (c == '"') {
            out += '"';
        }
    }
    return out + "\"";
}

} // namespace

/*
 * Reports.
 */

const ReportRow* ScenarioReport::find(const std::string& composition, int concurrency, const std::string& metric) const
{
    for (const auto& row : rows) {
        if (row.composition == composition && row.concurrency == concurrency && row.metric == metric) {
            return &row;
        }
    }
    return nullptr;
}

double ScenarioReport::mean(const std::string& composition, int concurrency, const std::string& metric) const
{
    if (const auto* row = find(composition, concurrency, metric)) {
        return row->meanMs;
    }
    throw Error(ErrorCode::NotFound, "no row " + composition + "/" + std::to_string(concurrency) + "/" + metric);
}

void ScenarioReport::summarize()
{
    std::map<std::tuple<std::string, int, std::string>, std::vector<double>> groups;
    std::vector<std::tuple<std::string, int, std::string>> order;
    for (const auto& sample : raw) {
        auto key = std::make_tuple(sample.composition, sample.concurrency, sample.metric);
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) {
            order.push_back(key);
        }
        it->second.push_back(sample.valueMs);
    }
    rows.clear();
    for (const auto& key : order) {
        const auto& values = groups.at(key);
        double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
        double squares = 0.0;
        for (double v : values) {
            squares += (v - mean) * (v - mean);
        }
        double stddev = values.size() > 1 ? std::sqrt(squares / static_cast<double>(values.size() - 1)) : 0.0;
        rows.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), mean, stddev, values.size()});
    }
}

std::string formatReport(const ScenarioReport& report)
{
    std::ostringstream out;
    out << fmt::format("{}  seed={}  timeScale={}\n\n", report.scenario, report.seed, report.timeScale);
    out << fmt::format("{:<12} {:>6} {:<16} {:>12} {:>12} {:>6}\n", "composition", "conc", "metric", "mean", "stddev", "n");
    for (const auto& row : report.rows) {
        out << fmt::format("{:<12} {:>6} {:<16} {:>12.3f} {:>12.3f} {:>6}\n", row.composition, row.concurrency,
            row.metric, row.meanMs, row.stddevMs, row.n);
    }
    if (!report.notes.empty()) {
        out << "\n";
        for (const auto& note : report.notes) {
            out << "note: " << note << "\n";
        }
    }
    return out.str();
}

void writeReport(const ScenarioReport& report, const std::filesystem::path& directory)
{
    std::filesystem::create_directories(directory);
    {
        std::ofstream out(directory / "summary.csv");
        out << "scenario,composition,concurrency,metric,mean_ms,stddev_ms,n,seed,time_scale\n";
        for (const auto& row : report.rows) {
            out << fmt::format("{},{},{},{},{:.6f},{:.6f},{},{},{}\n", report.scenario, csvField(row.composition),
                row.concurrency, csvField(row.metric), row.meanMs, row.stddevMs, row.n, report.seed, report.timeScale);
        }
    }
    {
        std::ofstream out(directory / "raw.csv");
        out << "scenario,composition,concurrency,metric,index,value_ms\n";
        for (const auto& sample : report.raw) {
            out << fmt::format("{},{},{},{},{},{:.6f}\n", report.scenario, csvField(sample.composition),
                sample.concurrency, csvField(sample.metric), sample.index, sample.valueMs);
        }
    }
    std::ofstream(directory / "report.txt") << formatReport(report);
}

double processCpuMs()
{
    rusage usage {};
    getrusage(RUSAGE_SELF, &usage);
    auto ms = [](const timeval& t) { return static_cast<double>(t.tv_sec) * 1000.0 + t.tv_usec / 1000.0; };
    return ms(usage.ru_utime) + ms(usage.ru_stime);
}

double residentMb()
{
    std::ifstream statm("/proc/self/statm");
    long pages = 0;
    long resident = 0;
    if (!(statm >> pages >> resident)) {
        return 0.0;
    }
    return static_cast<double>(resident) * static_cast<double>(sysconf(_SC_PAGESIZE)) / (1024.0 * 1024.0);
}

/*
 * REST client.
 */

RestClient::RestClient(std::string baseUrl)
    : mBaseUrl(std::move(baseUrl))
{
}

RestClient::~RestClient() = default;

void RestClient::login(const std::string& user, const std::string& password)
{
    auto response = post("/api/login", {{"user", user}, {"password", password}});
    if (response.status != 200) {
        throw Error(ErrorCode::InvalidCredentials, "login failed with HTTP " + std::to_string(response.status));
    }
    mToken = response.body.at("token").get<std::string>();
}

RestClient::Response RestClient::get(const std::string& path) const
{
    return send("GET", path, nullptr);
}

RestClient::Response RestClient::post(const std::string& path, const nlohmann::json& body) const
{
    std::string text = body.dump();
    return send("POST", path, &text);
}

RestClient::Response RestClient::del(const std::string& path) const
{
    return send("DELETE", path, nullptr);
}

RestClient::Response RestClient::send(const std::string& method, const std::string& path, const std::string* body) const
{
    std::unique_ptr<httplib::Client> connection;
    {
        std::lock_guard lock(mPoolMutex);
        if (!mIdle.empty()) {
            connection = std::move(mIdle.back());
            mIdle.pop_back();
        }
    }
    if (!connection) {
        connection = std::make_unique<httplib::Client>(mBaseUrl);
        connection->set_connection_timeout(10, 0);
        connection->set_read_timeout(60, 0);
        connection->set_keep_alive(true);
        connection->set_tcp_nodelay(true);
    }
    auto& client = *connection;
    httplib::Headers headers;
    if (!mToken.empty()) {
        headers.emplace("Authorization", "Bearer " + mToken);
    }
    httplib::Result result;
    if (method == "GET") {
        result = client.Get(path, headers);
    } else if (method == "POST") {
        result = client.Post(path, headers, *body, "application/json");
    } else {
        result = client.Delete(path, headers);
    }
    if (!result) {
        throw Error(ErrorCode::Internal, method + " " + path + " failed: " + httplib::to_string(result.error()));
    }
    {
        std::lock_guard lock(mPoolMutex);
        if (mIdle.size() < cMaxIdleConnections) {
            mIdle.push_back(std::move(connection));
        }
    }
    Response response;
    response.status = result->status;
    if (!result->body.empty()) {
        response.body = nlohmann::json::parse(result->body, nullptr, false);
    }
    return response;
}

/*
 * Webhook receiver.
 */

WebhookReceiver::WebhookReceiver()
    : mServer(std::make_unique<httplib::Server>())
{
    mServer->new_task_queue = [] { return new httplib::ThreadPool(8); };
    mServer->Post(".*", [this](const httplib::Request& req, httplib::Response& res) {
        double at = steadyMs();
        int status = 200;
        {
            std::lock_guard lock(mMutex);
            ++mRequests;
            if (!mScript.empty()) {
                status = mScript.front();
                mScript.pop_front();
            }
            if (status >= 200 && status < 300) {
                mReceived.push_back({at, req.body, nlohmann::json::parse(req.body, nullptr, false)});
            }
        }
        mCond.notify_all();
        res.status = status;
        res.set_content("{}", "application/json");
    });
    mPort = mServer->bind_to_any_port("127.0.0.1");
    if (mPort <= 0) {
        throw Error(ErrorCode::StartupFailed, "webhook receiver cannot bind");
    }
    mThread = std::thread([this] { mServer->listen_after_bind(); });
    mServer->wait_until_ready();
}

WebhookReceiver::~WebhookReceiver()
{
    mServer->stop();
    if (mThread.joinable()) {
        mThread.join();
    }
}

std::string WebhookReceiver::url() const
{
    return "http://127.0.0.1:" + std::to_string(mPort) + "/alerts";
}

void WebhookReceiver::scriptResponses(std::vector<int> statuses)
{
    std::lock_guard lock(mMutex);
    mScript.assign(statuses.begin(), statuses.end());
}

std::optional<WebhookReceiver::Received> WebhookReceiver::waitFor(const std::string& deploymentId, double afterMs,
    const std::vector<std::string>& skipEpisodes, double timeoutMs)
{
    auto match = [&]() -> std::optional<Received> {
        for (const auto& r : mReceived) {
            if (r.receivedAtMs < afterMs || !r.document.is_object()
                || r.document.value("deploymentId", "") != deploymentId) {
                continue;
            }
            auto episode = r.document.value("episodeId", "");
            if (std::find(skipEpisodes.begin(), skipEpisodes.end(), episode) == skipEpisodes.end()) {
                return r;
            }
        }
        return std::nullopt;
    };
    std::unique_lock lock(mMutex);
    std::optional<Received> found;
    mCond.wait_for(lock, std::chrono::duration<double, std::milli>(timeoutMs), [&] {
        found = match();
        return found.has_value();
    });
    return found;
}

std::vector<WebhookReceiver::Received> WebhookReceiver::received() const
{
    std::lock_guard lock(mMutex);
    return mReceived;
}

std::size_t WebhookReceiver::requestCount() const
{
    std::lock_guard lock(mMutex);
    return mRequests;
}

/*
 * Harness.
 */

Harness::Harness(HarnessConfig config)
    : mConfig(std::move(config))
{
    mReceiver = std::make_unique<WebhookReceiver>();

    GlobalConfig global = mConfig.base.value_or(GlobalConfig {});
    global.listenAddress = "127.0.0.1:0";
    global.timeScale = mConfig.timeScale;
    global.storePath = mConfig.workDir / "store";
    global.authSecret = "bench-secret-" + std::to_string(mConfig.seed);
    global.users = {{"bench", "bench"}};
    std::filesystem::remove_all(global.storePath);
    std::filesystem::create_directories(mConfig.workDir);

    Testbed testbed;
    if (mConfig.testbed) {
        testbed = *mConfig.testbed;
    } else if (!global.testbedConfigPath.empty()) {
        testbed = loadTestbed(global.testbedConfigPath);
    } else {
        testbed = defaultTestbed();
    }
    testbed.seed = mConfig.seed;
    testbed = withReplicas(std::move(testbed), mConfig.replicas);

    System::Overrides overrides;
    overrides.testbed = std::move(testbed);
    overrides.benchMode = true;
    mSystem = System::boot(global, overrides);
    mClient = std::make_unique<RestClient>(mSystem->baseUrl());
    mClient->login("bench", "bench");
}

Harness::~Harness()
{
    mClient.reset();
    mSystem.reset();
    mReceiver.reset();
}

nlohmann::json Harness::credentials() const
{
    nlohmann::json credentials = nlohmann::json::object();
    for (Platform platform : cAllPlatforms) {
        auto it = mSystem->testbed().credentialPrefixes.find(platform);
        std::string prefix = it == mSystem->testbed().credentialPrefixes.end() ? "" : it->second;
        credentials[std::string(toString(platform))] = prefix + "bench";
    }
    return credentials;
}

std::vector<Assignment> Harness::composition(const std::string& name, int instance) const
{
    auto it = compositions().find(name);
    if (it == compositions().end()) {
        throw Error(ErrorCode::InvalidArgument, "unknown composition " + name);
    }
    if (instance >= mConfig.replicas) {
        throw Error(ErrorCode::InvalidArgument, "not enough replicas for instance " + std::to_string(instance));
    }
    std::vector<Assignment> result;
    for (const auto& a : it->second) {
        result.push_back({replicaId(a.resourceId, instance), a.artifactRef});
    }
    return result;
}

nlohmann::json Harness::waitForStatus(
    const std::string& id, const std::vector<std::string>& statuses, double timeoutMs) const
{
    double deadline = steadyMs() + timeoutMs;
    while (true) {
        auto response = mClient->get("/api/deployments/" + id);
        if (response.status == 200) {
            auto status = response.body.value("status", "");
            if (std::find(statuses.begin(), statuses.end(), status) != statuses.end()) {
                return response.body;
            }
        }
        if (steadyMs() > deadline) {
            throw Error(ErrorCode::Timeout, "deployment " + id + " did not reach the expected status",
                {{"id", id}, {"last", response.body}});
        }
        sleepMs(2.0);
    }
}

/*
 * Scenario 1: deployment, termination and response times per composition.
 */

ScenarioReport runScenario1(Harness& harness, const Scenario1Options& options)
{
    ScenarioReport report;
    report.scenario = "scenario1";
    report.seed = harness.config().seed;
    report.timeScale = harness.config().timeScale;
    auto& client = harness.client();
    const double timeoutMs = 600'000.0 * std::max(harness.config().timeScale, 0.01);

    for (const auto& composition : options.compositions) {
        bool aborted = false;
        for (int concurrency : options.concurrency) {
            if (aborted) {
                break;
            }
            RssSampler sampler(100.0);
            for (int rep = 0; rep < options.repetitions && !aborted; ++rep) {
                double cpuBefore = processCpuMs();
                std::vector<std::string> ids(concurrency);
                std::vector<double> response(concurrency, 0.0);
                std::vector<int> statuses(concurrency, 0);
                std::vector<nlohmann::json> bodies(concurrency);

                parallelFor(concurrency, concurrency, [&](std::size_t i) {
                    nlohmann::json request = {{"assignments", nlohmann::json::array()},
                        {"credentials", harness.credentials()}};
                    for (const auto& a : harness.composition(composition, static_cast<int>(i))) {
                        request["assignments"].push_back({{"resourceId", a.resourceId}, {"artifact", a.artifactRef}});
                    }
                    double t0 = steadyMs();
                    auto result = client.post("/api/deployments", request);
                    response[i] = steadyMs() - t0;
                    statuses[i] = result.status;
                    bodies[i] = result.body;
                    if (result.status == 201) {
                        ids[i] = result.body.at("id").get<std::string>();
                    }
                });

                for (int i = 0; i < concurrency; ++i) {
                    if (statuses[i] != 201) {
                        report.notes.push_back(fmt::format("{} c={} rep={} create failed with HTTP {}: {}", composition,
                            concurrency, rep, statuses[i], bodies[i].dump()));
                        aborted = statuses[i] == 400;
                        continue;
                    }
                    int index = rep * concurrency + i;
                    report.raw.push_back({composition, concurrency, "responseTime", index, response[i]});
                }

                std::vector<double> deleteResponse(concurrency, 0.0);
                parallelFor(concurrency, concurrency, [&](std::size_t i) {
                    if (ids[i].empty()) {
                        return;
                    }
                    auto ready = harness.waitForStatus(ids[i], {"READY", "ERROR"}, timeoutMs);
                    if (ready.value("status", "") == "READY") {
                        bodies[i] = ready;
                    } else {
                        bodies[i] = nlohmann::json();
                    }
                });
                for (int i = 0; i < concurrency; ++i) {
                    if (!ids[i].empty() && bodies[i].is_object() && bodies[i].contains("deploymentTimeMs")) {
                        report.raw.push_back({composition, concurrency, "deploymentTime", rep * concurrency + i,
                            bodies[i].at("deploymentTimeMs").get<double>()});
                    } else if (!ids[i].empty()) {
                        report.notes.push_back(fmt::format("{} c={} rep={} deployment {} ended in ERROR", composition,
                            concurrency, rep, ids[i]));
                    }
                }

                parallelFor(concurrency, concurrency, [&](std::size_t i) {
                    if (ids[i].empty()) {
                        return;
                    }
                    double t0 = steadyMs();
                    client.del("/api/deployments/" + ids[i]);
                    deleteResponse[i] = steadyMs() - t0;
                    bodies[i] = harness.waitForStatus(ids[i], {"TERMINATED"}, timeoutMs);
                });
                for (int i = 0; i < concurrency; ++i) {
                    if (!ids[i].empty() && bodies[i].contains("terminationTimeMs")) {
                        report.raw.push_back({composition, concurrency, "terminationTime", rep * concurrency + i,
                            bodies[i].at("terminationTimeMs").get<double>()});
                        report.raw.push_back(
                            {composition, concurrency, "terminateResponse", rep * concurrency + i, deleteResponse[i]});
                    }
                }
                report.raw.push_back({composition, concurrency, "cpuTime", rep, processCpuMs() - cpuBefore});
            }
            auto rss = sampler.stop();
            for (std::size_t k = 0; k < rss.size(); ++k) {
                report.raw.push_back({composition, concurrency, "rssMb", static_cast<int>(k), rss[k]});
            }
        }
        if (aborted) {
            report.notes.push_back(composition + " aborted after a rejected request");
        }
    }
    report.summarize();
    return report;
}

/*
 * Scenario 2: reaction time from an injected violation to the webhook.
 */

ScenarioReport runScenario2(Harness& harness, const Scenario2Options& options)
{
    ScenarioReport report;
    report.scenario = "scenario2";
    report.seed = harness.config().seed;
    report.timeScale = harness.config().timeScale;
    auto& client = harness.client();
    auto& system = harness.system();
    const double interval = static_cast<double>(harness.evaluationIntervalMs()) * harness.config().timeScale;
    const double timeoutMs = std::max(60'000.0 * harness.config().timeScale, 3.0 * interval);
    std::mutex reportMutex;

    for (int count : options.deploymentCounts) {
        std::vector<std::string> ids(count);
        std::vector<std::string> resources(count);
        for (int i = 0; i < count; ++i) {
            auto assignments = harness.composition("faasEdge", i);
            resources[i] = assignments.front().resourceId;
            nlohmann::json request = {
                {"assignments", {{{"resourceId", resources[i]}, {"artifact", assignments.front().artifactRef}}}},
                {"slos", {options.slo}},
                {"alerting", {{"enabled", true}, {"webhookUrl", harness.receiver().url()}}},
                {"credentials", harness.credentials()},
            };
            auto created = client.post("/api/deployments", request);
            if (created.status != 201) {
                throw Error(ErrorCode::Internal, "scenario 2 deployment failed: " + created.body.dump());
            }
            ids[i] = created.body.at("id").get<std::string>();
        }
        for (const auto& id : ids) {
            harness.waitForStatus(id, {"READY"}, timeoutMs * 10);
        }

        parallelFor(count, count, [&](std::size_t i) {
            const auto& id = ids[i];
            std::mt19937_64 rng(harness.config().seed * 1000003ull + static_cast<std::uint64_t>(count) * 131ull + i);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            const int k = options.injectionsPerDeployment;
            std::vector<int> strata(k);
            std::iota(strata.begin(), strata.end(), 0);
            std::shuffle(strata.begin(), strata.end(), rng);

            auto sloOk = [&] {
                auto response = client.get("/api/deployments/" + id);
                return response.status == 200 && response.body.contains("sloStatus")
                    && response.body.at("sloStatus").size() == 1 && response.body.at("sloStatus")[0] == "OK";
            };
            auto waitOk = [&] {
                double deadline = steadyMs() + timeoutMs;
                while (!sloOk()) {
                    if (steadyMs() > deadline) {
                        return false;
                    }
                    sleepMs(interval / 10.0);
                }
                return true;
            };

            if (!waitOk()) {
                std::lock_guard lock(reportMutex);
                report.notes.push_back("deployment " + id + " never reported an OK SLO before injections");
                return;
            }

            std::vector<std::string> seenEpisodes;
            std::optional<double> lastDetection;
            for (int n = 0; n < k; ++n) {
                double offset = (static_cast<double>(strata[n]) + unit(rng)) / static_cast<double>(k) * interval;
                double injectAt = steadyMs() + offset;
                if (lastDetection) {
                    // Ticks of this deployment fall on the grid of the previous detection.
                    injectAt = *lastDetection + offset;
                    while (injectAt < steadyMs() + 0.5) {
                        injectAt += interval;
                    }
                }
                sleepMs(injectAt - steadyMs());

                system.simulator().injectLatency(resources[i], options.injectedLatencyMs);
                double injectedAt = steadyMs();
                system.alerting().recordInjection(id, nowMs());

                auto alert = harness.receiver().waitFor(id, injectedAt, seenEpisodes, timeoutMs);
                system.simulator().injectLatency(resources[i], 0.0);
                if (!alert) {
                    std::lock_guard lock(reportMutex);
                    report.notes.push_back(fmt::format("injection {} on {} (N={}) produced no alert within {:.0f} ms",
                        n, id, count, timeoutMs));
                    waitOk();
                    continue;
                }
                double reaction = alert->receivedAtMs - injectedAt;
                seenEpisodes.push_back(alert->document.value("episodeId", ""));
                lastDetection = alert->receivedAtMs;
                {
                    std::lock_guard lock(reportMutex);
                    report.raw.push_back({"faasEdge", count, "reactionTime", static_cast<int>(i) * k + n, reaction});
                }
                sleepMs(interval * 0.5);
                if (!waitOk()) {
                    std::lock_guard lock(reportMutex);
                    report.notes.push_back("deployment " + id + " stayed VIOLATED after the injection was cleared");
                    return;
                }
            }
        });

        for (const auto& id : ids) {
            client.del("/api/deployments/" + id);
        }
        for (const auto& id : ids) {
            harness.waitForStatus(id, {"TERMINATED"}, timeoutMs * 10);
        }
    }
    report.notes.push_back(fmt::format("evaluation interval {:.3f} ms real time", interval));
    report.summarize();
    return report;
}

/*
 * Scenario 3: invocation round trips through the manager and directly.
 */

ScenarioReport runScenario3(Harness& harness, const Scenario3Options& options)
{
    ScenarioReport report;
    report.scenario = "scenario3";
    report.seed = harness.config().seed;
    report.timeScale = harness.config().timeScale;
    auto& client = harness.client();
    auto& system = harness.system();
    const double timeoutMs = 600'000.0 * std::max(harness.config().timeScale, 0.01);

    std::map<std::string, std::string> deployments;
    for (const auto& target : options.targets) {
        auto it = invocationTargets().find(target);
        if (it == invocationTargets().end()) {
            throw Error(ErrorCode::InvalidArgument, "unknown invocation target " + target);
        }
        nlohmann::json request = {
            {"assignments", {{{"resourceId", it->second.resourceId}, {"artifact", it->second.artifactRef}}}},
            {"credentials", harness.credentials()},
        };
        auto created = client.post("/api/deployments", request);
        if (created.status != 201) {
            throw Error(ErrorCode::Internal, "scenario 3 deployment failed: " + created.body.dump());
        }
        deployments[target] = created.body.at("id").get<std::string>();
    }
    for (const auto& [target, id] : deployments) {
        harness.waitForStatus(id, {"READY"}, timeoutMs);
    }

    double nextArrival = 0.0;
    auto reserveArrival = [&](const ResourceRecord& resource, const Artifact& artifact, int burst) {
        double arrival = std::max(system.simulator().virtualNowMs(), nextArrival) + 1000.0;
        double span = static_cast<double>(artifact.behavior.sleepMs)
            * std::ceil(static_cast<double>(burst) / std::max(1, resource.cpuCores));
        nextArrival = arrival + span + 10.0 * static_cast<double>(artifact.behavior.sleepMs) + 1000.0;
        return arrival;
    };

    for (const auto& target : options.targets) {
        const auto& id = deployments.at(target);
        const auto& assignment = invocationTargets().at(target);
        ResourceRecord resource = system.store().getResource(assignment.resourceId);
        const Artifact* artifact = system.testbed().findArtifact(assignment.artifactRef);
        auto handles = system.engine().handles(id);
        if (handles.empty() || !artifact) {
            throw Error(ErrorCode::Internal, "scenario 3 target " + target + " has no running handle");
        }
        auto& driver = system.simulator().driver(resource.platform);
        const std::string handleId = handles.front().handleId;

        for (int level : options.concurrency) {
            std::size_t bursts = std::max<std::size_t>(1, (options.minSamples + level - 1) / level);
            std::atomic<int> queueTimeouts {0};
            std::atomic<int> failures {0};
            for (std::size_t b = 0; b < bursts; ++b) {
                std::vector<double> manager(level, -1.0);
                std::vector<double> direct(level, -1.0);

                double arrival = reserveArrival(resource, *artifact, level);
                parallelFor(level, options.clientWorkers, [&](std::size_t i) {
                    nlohmann::json body = {{"artifact", assignment.artifactRef}, {"payload", {{"i", i}}},
                        {"arrivalMs", arrival}};
                    double t0 = steadyMs();
                    auto result = client.post("/api/deployments/" + id + "/invoke", body);
                    double elapsed = steadyMs() - t0;
                    if (result.status == 200) {
                        manager[i] = elapsed + result.body.at("rttMs").get<double>();
                    } else if (result.body.value("error", "") == "QueueTimeout") {
                        ++queueTimeouts;
                    } else {
                        ++failures;
                    }
                });

                arrival = reserveArrival(resource, *artifact, level);
                parallelFor(level, options.clientWorkers, [&](std::size_t i) {
                    nlohmann::json payload = {{"i", i}};
                    double t0 = steadyMs();
                    try {
                        auto result = driver.invoke(handleId, payload, arrival);
                        direct[i] = steadyMs() - t0 + result.rttMs;
                    } catch (const Error& e) {
                        if (e.code() == ErrorCode::QueueTimeout) {
                            ++queueTimeouts;
                        } else {
                            ++failures;
                        }
                    }
                });

                for (int i = 0; i < level; ++i) {
                    int index = static_cast<int>(b) * level + i;
                    if (manager[i] >= 0) {
                        report.raw.push_back({target, level, "rtt.manager", index, manager[i]});
                    }
                    if (direct[i] >= 0) {
                        report.raw.push_back({target, level, "rtt.direct", index, direct[i]});
                    }
                }
            }
            if (queueTimeouts > 0 || failures > 0) {
                report.notes.push_back(fmt::format("{} at {}: {} queue timeouts, {} failed invocations", target, level,
                    queueTimeouts.load(), failures.load()));
            }
        }
    }

    for (const auto& [target, id] : deployments) {
        client.del("/api/deployments/" + id);
    }
    for (const auto& [target, id] : deployments) {
        harness.waitForStatus(id, {"TERMINATED"}, timeoutMs);
    }

    report.summarize();
    std::vector<ReportRow> overhead;
    for (const auto& target : options.targets) {
        for (int level : options.concurrency) {
            const auto* managerRow = report.find(target, level, "rtt.manager");
            const auto* directRow = report.find(target, level, "rtt.direct");
            if (managerRow && directRow && directRow->meanMs > 0) {
                double pct = (managerRow->meanMs - directRow->meanMs) / directRow->meanMs * 100.0;
                overhead.push_back({target, level, "overheadPct", pct, 0.0, std::min(managerRow->n, directRow->n)});
            }
        }
    }
    report.rows.insert(report.rows.end(), overhead.begin(), overhead.end());
    report.notes.push_back("rtt = client-observed wall time of the call + modelled provider round trip (unscaled ms)");
    return report;
}

} // namespace rm::bench
