/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef RM_TSDB_HPP_
#define RM_TSDB_HPP_

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <rm/domain.hpp>

namespace rm {

/*
 * Wire formats.
 *
 * Push (line protocol), one sample per line:
 *   put <metric> <timestampSeconds> <value> <tagk=tagv>( <tagk=tagv>)*\n
 * Timestamps that are not whole seconds are written with a millisecond fraction
 * (1700000000.250).
 *
 * Scrape (exposition text), one sample per line:
 *   <metric>{<tagk>="<tagv>",...} <value>\n
 */

/// Parses one push line; throws LineParseError with the byte offset in details["position"].
MetricSample parseLine(std::string_view line);

/// Formats a sample as a push line (tags sorted, trailing newline).
std::string formatLine(const MetricSample& sample);

std::string formatExposition(const std::vector<MetricSample>& samples);

/// Parses exposition text; every sample gets `timestampMs`. Throws ParseError.
std::vector<MetricSample> parseExposition(std::string_view text, TimestampMs timestampMs);

enum class Aggregator { Last, Avg, Max, Min };

Aggregator aggregatorFromString(std::string_view name);
std::string_view toString(Aggregator aggregator);

struct SeriesResult {
    std::string metric;
    TagMap tags;
    /// Raw points in range, oldest first; empty when an aggregator was applied.
    std::vector<std::pair<TimestampMs, double>> points;
    /// Aggregated value and the timestamp of the newest point it covers.
    std::optional<double> value;
    TimestampMs timestampMs {0};
};

void to_json(nlohmann::json& j, const SeriesResult& s);

struct PushResult {
    std::size_t accepted {0};
    /// (line number starting at 1, reason)
    std::vector<std::pair<std::size_t, std::string>> rejected;
};

/**
 * In-memory time-series store. A series is identified by metric name plus tag
 * set and keeps its points ordered by time; writing an existing timestamp
 * overwrites it, and the oldest points are dropped past the retention limit.
 */
class Tsdb {
public:
    struct Options {
        std::size_t retention {100'000};
    };

    Tsdb();
    explicit Tsdb(Options options);

    /// Parses and stores one line-protocol sample.
    MetricSample ingestLine(std::string_view line);

    /// Multi-line push body. Malformed lines are reported, never fatal.
    PushResult ingestText(std::string_view body);

    /// Stores valid samples and skips invalid ones; returns the number stored.
    std::size_t pushSamples(std::span<const MetricSample> samples);

    /// Throws InvalidArgument for an invalid sample.
    void put(const MetricSample& sample);

    /// Series of `metric` whose tags include every entry of `tagFilter`, restricted to
    /// [fromMs, toMs]. Series without points in range are omitted.
    std::vector<SeriesResult> query(const std::string& metric, const TagMap& tagFilter, TimestampMs fromMs,
        TimestampMs toMs, std::optional<Aggregator> aggregator) const;

    std::size_t seriesCount() const;
    std::size_t pointCount() const;

private:
    struct Series {
        std::string metric;
        TagMap tags;
        mutable std::mutex mutex;
        std::map<TimestampMs, double> points;
    };

    static std::string seriesKey(const std::string& metric, const TagMap& tags);
    Series& seriesFor(const MetricSample& sample);

    Options mOptions;
    mutable std::shared_mutex mMutex;
    std::map<std::string, std::unique_ptr<Series>> mSeries;
};

} // namespace rm

#endif
