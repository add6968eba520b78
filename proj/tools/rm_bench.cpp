/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <rm/bench.hpp>

int main(int argc, char** argv)
{
    CLI::App app {"Benchmark harness for the resource manager"};
    app.require_subcommand(1, 1);
    std::string configPath;
    std::uint64_t seed = 42;
    double timeScale = 0.01;
    std::string outDir = "bench-out";
    int repetitions = 3;
    int injections = 50;
    std::string logLevel = "warn";

    app.add_option("--config", configPath, "configuration file (evaluation interval, testbed)");
    app.add_option("--seed", seed, "simulation seed");
    app.add_option("--time-scale", timeScale, "multiplier applied to every simulated latency")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", outDir, "output directory");
    app.add_option("--log-level", logLevel, "trace, debug, info, warn or error");
    auto* s1 = app.add_subcommand("scenario1", "deployment, termination and response times");
    s1->add_option("--repetitions", repetitions, "repetitions per composition and concurrency level");
    auto* s2 = app.add_subcommand("scenario2", "reaction time to SLO violations");
    s2->add_option("--injections", injections, "injected violations per deployment");
    app.add_subcommand("scenario3", "invocation round trips up to 384 concurrent calls");
    CLI11_PARSE(app, argc, argv);

    spdlog::set_level(spdlog::level::from_str(logLevel));
    try {
        rm::bench::HarnessConfig config;
        config.seed = seed;
        config.timeScale = timeScale;
        config.workDir = std::filesystem::path(outDir) / ".work";
        if (!configPath.empty()) {
            config.base = rm::loadConfig(configPath);
        }
        rm::bench::Harness harness(config);

        rm::bench::ScenarioReport report;
        if (s1->parsed()) {
            rm::bench::Scenario1Options options;
            options.repetitions = repetitions;
            report = rm::bench::runScenario1(harness, options);
        } else if (s2->parsed()) {
            rm::bench::Scenario2Options options;
            options.injectionsPerDeployment = injections;
            report = rm::bench::runScenario2(harness, options);
        } else {
            report = rm::bench::runScenario3(harness, {});
        }
        rm::bench::writeReport(report, outDir);
        std::cout << rm::bench::formatReport(report);
    } catch (const rm::Error& e) {
        std::cerr << "rm-bench: " << rm::toString(e.code()) << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
