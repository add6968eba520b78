/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_ERROR_HPP_
#define RM_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace rm {

/**
 * Error kinds shared by every component. The kind survives a trip across the
 * event bus, so the REST layer can map it to a status code.
 */
enum class ErrorCode {
    IllegalTransition,
    ParseError,
    MigrationFailed,
    ResourceConflict,
    NotFound,
    InvalidArgument,
    QueueFull,
    Timeout,
    NoHandler,
    InvalidCredentials,
    IncompatibleArtifact,
    ProviderUnreachable,
    UnknownHandle,
    NotRunning,
    QueueTimeout,
    LineParseError,
    UnknownAggregator,
    DeliveryFailed,
    NoCandidate,
    MissingGroundTruth,
    ConfigError,
    StartupFailed,
    ValidationFailed,
    Unauthorized,
    StoreError,
    Internal,
};

std::string_view toString(ErrorCode code);
ErrorCode errorCodeFromString(std::string_view name);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, nlohmann::json details = nullptr)
        : std::runtime_error(message)
        , mCode(code)
        , mDetails(std::move(details))
    {
    }

    ErrorCode code() const noexcept { return mCode; }
    const nlohmann::json& details() const noexcept { return mDetails; }

private:
    ErrorCode mCode;
    nlohmann::json mDetails;
};

} // namespace rm

#endif
