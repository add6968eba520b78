/*
 * Copyright (C) 2026 The rm Authors.
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <rm/tsdb.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>

namespace rm {

namespace {

Error lineError(std::size_t position, const std::string& reason)
{
    return Error(ErrorCode::LineParseError, "line protocol error at " + std::to_string(position) + ": " + reason,
        {{"position", position}, {"reason", reason}});
}

bool isSpace(char c)
{
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string formatDouble(double value)
{
    std::array<char, 64> buffer {};
    auto [end, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
    return std::string(buffer.data(), end);
}

bool parseDouble(std::string_view text, double& out)
{
    if (text.empty()) {
        return false;
    }
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && end == text.data() + text.size() && std::isfinite(out);
}

bool allDigits(std::string_view text)
{
    return !text.empty()
        && std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

/// Seconds with an optional 1-3 digit fraction, converted to milliseconds.
bool parseTimestamp(std::string_view text, TimestampMs& out)
{
    std::string_view seconds = text;
    std::string_view fraction;
    if (auto dot = text.find('.'); dot != std::string_view::npos) {
        seconds = text.substr(0, dot);
        fraction = text.substr(dot + 1);
        if (fraction.empty() || fraction.size() > 3 || !allDigits(fraction)) {
            return false;
        }
    }
    if (!allDigits(seconds) || seconds.size() > 12) {
        return false;
    }
    std::int64_t whole = 0;
    std::from_chars(seconds.data(), seconds.data() + seconds.size(), whole);
    std::int64_t millis = 0;
    if (!fraction.empty()) {
        std::from_chars(fraction.data(), fraction.data() + fraction.size(), millis);
        for (std::size_t i = fraction.size(); i < 3; ++i) {
            millis *= 10;
        }
    }
    out = whole * 1000 + millis;
    return true;
}

std::string formatTimestamp(TimestampMs ms)
{
    std::string text = std::to_string(ms / 1000);
    if (auto millis = ms % 1000; millis != 0) {
        std::array<char, 4> digits {};
        digits[0] = static_cast<char>('0' + millis / 100);
        digits[1] = static_cast<char>('0' + (millis / 10) % 10);
        digits[2] = static_cast<char>('0' + millis % 10);
        text += '.';
        text += std::string_view(digits.data(), 3);
    }
    return text;
}

} // namespace

MetricSample parseLine(std::string_view line)
{
    if (!line.empty() && line.back() == '\n') {
        line.remove_suffix(1);
    }

    // Split on single spaces, remembering where every field starts.
    std::vector<std::pair<std::size_t, std::string_view>> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ' ') {
            if (i == start) {
                throw lineError(i, "empty field");
            }
            fields.emplace_back(start, line.substr(start, i - start));
            start = i + 1;
        } else if (isSpace(line[i])) {
            throw lineError(i, "unexpected whitespace");
        }
    }

    if (fields.empty() || fields[0].second != "put") {
        throw lineError(0, "expected 'put'");
    }
    if (fields.size() < 5) {
        throw lineError(line.size(), "expected '<metric> <timestamp> <value> <tag>...'");
    }

    MetricSample sample;
    sample.metric = std::string(fields[1].second);

    if (!parseTimestamp(fields[2].second, sample.timestampMs) || sample.timestampMs <= 0) {
        throw lineError(fields[2].first, "invalid timestamp");
    }
    if (!parseDouble(fields[3].second, sample.value)) {
        throw lineError(fields[3].first, "invalid value");
    }

    for (std::size_t f = 4; f < fields.size(); ++f) {
        auto [offset, tag] = fields[f];
        auto eq = tag.find('=');
        if (eq == std::string_view::npos || eq == 0 || eq + 1 == tag.size()) {
            throw lineError(offset, "tag must be key=value");
        }
        if (tag.find('=', eq + 1) != std::string_view::npos) {
            throw lineError(offset + tag.find('=', eq + 1), "'=' inside tag value");
        }
        auto [it, inserted] = sample.tags.emplace(std::string(tag.substr(0, eq)), std::string(tag.substr(eq + 1)));
        if (!inserted) {
            throw lineError(offset, "duplicate tag key");
        }
    }
    return sample;
}

std::string formatLine(const MetricSample& sample)
{
    std::string line = "put " + sample.metric + " " + formatTimestamp(sample.timestampMs) + " " + formatDouble(sample.value);
    for (const auto& [key, value] : sample.tags) {
        line += " " + key + "=" + value;
    }
    line += "\n";
    return line;
}

std::string formatExposition(const std::vector<MetricSample>& samples)
{
    std::string text;
    for (const auto& sample : samples) {
        text += sample.metric + "{";
        bool first = true;
        for (const auto& [key, value] : sample.tags) {
            if (!first) {
                text += ",";
            }
            text += key + "=\"" + value + "\"";
            first = false;
        }
        text += "} " + formatDouble(sample.value) + "\n";
    }
    return text;
}

std::vector<MetricSample> parseExposition(std::string_view text, TimestampMs timestampMs)
{
    std::vector<MetricSample> samples;
    std::size_t lineNo = 0;
    while (!text.empty()) {
        ++lineNo;
        auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view {} : text.substr(nl + 1);
        if (line.empty() || line.front() == '#') {
            continue;
        }

        auto fail = [&](const std::string& why) {
            return Error(ErrorCode::ParseError, "exposition line " + std::to_string(lineNo) + ": " + why,
                {{"line", lineNo}, {"token", std::string(line)}});
        };

        MetricSample sample;
        sample.timestampMs = timestampMs;
        auto brace = line.find('{');
        auto space = line.rfind(' ');
        if (space == std::string_view::npos) {
            throw fail("missing value");
        }
        if (brace != std::string_view::npos && brace < space) {
            auto close = line.find('}', brace);
            if (close == std::string_view::npos || close > space) {
                throw fail("unterminated label set");
            }
            sample.metric = std::string(line.substr(0, brace));
            std::string_view labels = line.substr(brace + 1, close - brace - 1);
            while (!labels.empty()) {
                auto eq = labels.find("=\"");
                if (eq == std::string_view::npos) {
                    throw fail("bad label");
                }
                auto endQuote = labels.find('"', eq + 2);
                if (endQuote == std::string_view::npos) {
                    throw fail("bad label");
                }
                sample.tags[std::string(labels.substr(0, eq))] = std::string(labels.substr(eq + 2, endQuote - eq - 2));
                labels = labels.substr(endQuote + 1);
                if (!labels.empty()) {
                    if (labels.front() != ',') {
                        throw fail("bad label separator");
                    }
                    labels.remove_prefix(1);
                }
            }
        } else {
            sample.metric = std::string(line.substr(0, space));
        }
        if (!parseDouble(line.substr(space + 1), sample.value)) {
            throw fail("invalid value");
        }
        if (auto why = sample.invalidReason(); !why.empty()) {
            throw fail(why);
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

Aggregator aggregatorFromString(std::string_view name)
{
    if (name == "last") {
        return Aggregator::Last;
    }
    if (name == "avg") {
        return Aggregator::Avg;
    }
    if (name == "max") {
        return Aggregator::Max;
    }
    if (name == "min") {
        return Aggregator::Min;
    }
    throw Error(ErrorCode::UnknownAggregator, "unknown aggregator '" + std::string(name) + "'",
        {{"aggregator", std::string(name)}});
}

std::string_view toString(Aggregator aggregator)
{
    switch (aggregator) {
    case Aggregator::Last:
        return "last";
    case Aggregator::Avg:
        return "avg";
    case Aggregator::Max:
        return "max";
    case Aggregator::Min:
        return "min";
    }
    return "?";
}

void to_json(nlohmann::json& j, const SeriesResult& s)
{
    j = nlohmann::json {{"metric", s.metric}, {"tags", s.tags}};
    if (s.value) {
        j["value"] = *s.value;
        j["timestampMs"] = s.timestampMs;
    } else {
        j["points"] = nlohmann::json::array();
        for (const auto& [ts, value] : s.points) {
            j["points"].push_back({ts, value});
        }
    }
}

/*
 * Tsdb.
 */

Tsdb::Tsdb()
    : Tsdb(Options {})
{
}

Tsdb::Tsdb(Options options)
    : mOptions(options)
{
    if (mOptions.retention == 0) {
        mOptions.retention = 1;
    }
}

std::string Tsdb::seriesKey(const std::string& metric, const TagMap& tags)
{
    std::string key = metric;
    for (const auto& [k, v] : tags) {
        key += '\x1f';
        key += k;
        key += '=';
        key += v;
    }
    return key;
}

Tsdb::Series& Tsdb::seriesFor(const MetricSample& sample)
{
    auto key = seriesKey(sample.metric, sample.tags);
    {
        std::shared_lock lock(mMutex);
        if (auto it = mSeries.find(key); it != mSeries.end()) {
            return *it->second;
        }
    }
    std::unique_lock lock(mMutex);
    auto& slot = mSeries[key];
    if (!slot) {
        slot = std::make_unique<Series>();
        slot->metric = sample.metric;
        slot->tags = sample.tags;
    }
    return *slot;
}

void Tsdb::put(const MetricSample& sample)
{
    if (auto why = sample.invalidReason(); !why.empty()) {
        throw Error(ErrorCode::InvalidArgument, "invalid sample: " + why);
    }
    auto& series = seriesFor(sample);
    std::lock_guard lock(series.mutex);
    series.points[sample.timestampMs] = sample.value;
    while (series.points.size() > mOptions.retention) {
        series.points.erase(series.points.begin());
    }
}

MetricSample Tsdb::ingestLine(std::string_view line)
{
    MetricSample sample = parseLine(line);
    put(sample);
    return sample;
}

PushResult Tsdb::ingestText(std::string_view body)
{
    PushResult result;
    std::size_t lineNo = 0;
    while (!body.empty()) {
        ++lineNo;
        auto nl = body.find('\n');
        std::string_view line = body.substr(0, nl);
        body = nl == std::string_view::npos ? std::string_view {} : body.substr(nl + 1);
        if (line.empty()) {
            continue;
        }
        try {
            ingestLine(line);
            ++result.accepted;
        } catch (const Error& e) {
            result.rejected.emplace_back(lineNo, e.what());
        }
    }
    return result;
}

std::size_t Tsdb::pushSamples(std::span<const MetricSample> samples)
{
    std::size_t accepted = 0;
    for (const auto& sample : samples) {
        if (sample.isValid()) {
            put(sample);
            ++accepted;
        }
    }
    return accepted;
}

std::vector<SeriesResult> Tsdb::query(const std::string& metric, const TagMap& tagFilter, TimestampMs fromMs,
    TimestampMs toMs, std::optional<Aggregator> aggregator) const
{
    if (fromMs > toMs) {
        throw Error(ErrorCode::InvalidArgument, "query range is empty (fromMs > toMs)");
    }

    std::vector<SeriesResult> results;
    std::shared_lock lock(mMutex);
    for (const auto& [key, series] : mSeries) {
        if (series->metric != metric) {
            continue;
        }
        bool matches = std::all_of(tagFilter.begin(), tagFilter.end(), [&](const auto& filter) {
            auto it = series->tags.find(filter.first);
            return it != series->tags.end() && it->second == filter.second;
        });
        if (!matches) {
            continue;
        }

        SeriesResult result;
        result.metric = series->metric;
        result.tags = series->tags;
        {
            std::lock_guard seriesLock(series->mutex);
            auto begin = series->points.lower_bound(fromMs);
            auto end = series->points.upper_bound(toMs);
            result.points.assign(begin, end);
        }
        if (result.points.empty()) {
            continue;
        }

        if (aggregator) {
            result.timestampMs = result.points.back().first;
            switch (*aggregator) {
            case Aggregator::Last:
                result.value = result.points.back().second;
                break;
            case Aggregator::Avg: {
                double sum = 0.0;
                for (const auto& point : result.points) {
                    sum += point.second;
                }
                result.value = sum / static_cast<double>(result.points.size());
                break;
            }
            case Aggregator::Max:
                result.value = std::max_element(result.points.begin(), result.points.end(),
                    [](const auto& a, const auto& b) { return a.second < b.second; })->second;
                break;
            case Aggregator::Min:
                result.value = std::min_element(result.points.begin(), result.points.end(),
                    [](const auto& a, const auto& b) { return a.second < b.second; })->second;
                break;
            }
            result.points.clear();
        }
        results.push_back(std::move(result));
    }
    return results;
}

std::size_t Tsdb::seriesCount() const
{
    std::shared_lock lock(mMutex);
    return mSeries.size();
}

std::size_t Tsdb::pointCount() const
{
    std::shared_lock lock(mMutex);
    std::size_t total = 0;
    for (const auto& [key, series] : mSeries) {
        std::lock_guard seriesLock(series->mutex);
        total += series->points.size();
    }
    return total;
}

} // namespace rm
