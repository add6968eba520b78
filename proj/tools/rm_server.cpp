/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <csignal>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <rm/api.hpp>

namespace {

volatile std::sig_atomic_t gStop = 0;

void onSignal(int)
{
    gStop = 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app {"Resource manager service"};
    std::string configPath = "config/rm.json";
    std::string logLevel = "info";
    app.add_option("-c,--config", configPath, "configuration file (RM_CONFIG overrides)");
    app.add_option("--log-level", logLevel, "trace, debug, info, warn or error");
    CLI11_PARSE(app, argc, argv);

    spdlog::set_level(spdlog::level::from_str(logLevel));
    try {
        auto config = rm::loadConfig(configPath);
        auto system = rm::System::boot(config);
        spdlog::info("listening on {}", system->baseUrl());

        std::signal(SIGINT, onSignal);
        std::signal(SIGTERM, onSignal);
        while (!gStop) {
            rm::sleepMs(100);
        }
        spdlog::info("shutting down");
    } catch (const rm::Error& e) {
        std::cerr << "rm-server: " << rm::toString(e.code()) << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
