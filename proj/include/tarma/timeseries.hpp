#pragma once

#include "tarma/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tarma {

/// Univariate series with optional month/date labels.
struct TimeSeries {
    std::vector<double> values;
    std::vector<std::string> timestamps;  // empty, or one label per value

    std::size_t size() const { return values.size(); }
    std::span<const double> view() const { return values; }
    bool operator==(const TimeSeries&) const = default;
};

/// Throws ConfigError unless the series is non-empty, finite, and its
/// timestamps (if any) match in count and are strictly increasing.
inline void check_series(const TimeSeries& s) {
    if (s.values.empty()) throw ConfigError("time series has no observations");
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        if (!std::isfinite(s.values[i]))
            throw ConfigError("time series value at index " + std::to_string(i) + " is not finite");
    }
    if (!s.timestamps.empty()) {
        if (s.timestamps.size() != s.values.size())
            throw ConfigError("timestamp count does not match value count");
        for (std::size_t i = 1; i < s.timestamps.size(); ++i) {
            if (!(s.timestamps[i - 1] < s.timestamps[i]))
                throw ConfigError("timestamps are not strictly increasing at index " + std::to_string(i));
        }
    }
}

inline TimeSeries make_series(std::vector<double> values, std::vector<std::string> timestamps = {}) {
    TimeSeries s{std::move(values), std::move(timestamps)};
    check_series(s);
    return s;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace detail

/**
 * Load one numeric column from a comma-separated file with a header row.
 *
 * `column` is matched against header names first; failing that, a plain
 * integer is taken as a 0-based column index. A column whose header is
 * date, month, time or timestamp (case-insensitive) supplies the labels.
 * Blank lines are ignored. Any unparseable target cell is an error naming
 * its 1-based data row.
 */
inline TimeSeries load_csv(const std::string& path, const std::string& column) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file '" + path + "'");

    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!detail::trim(line).empty()) {
            header = detail::split_csv_line(line);
            break;
        }
    }
    if (header.empty()) throw ConfigError("CSV file '" + path + "' has no header row");

    std::size_t target = header.size();
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == column) {
            target = j;
            break;
        }
    }
    if (target == header.size()) {
        std::size_t idx = 0;
        const auto [ptr, ec] = std::from_chars(column.data(), column.data() + column.size(), idx);
        if (ec == std::errc{} && ptr == column.data() + column.size() && idx < header.size())
            target = idx;
        else
            throw ConfigError("column '" + column + "' not found in '" + path + "'");
    }
    std::size_t stamp_col = header.size();
    for (std::size_t j = 0; j < header.size(); ++j) {
        const auto h = detail::lower(header[j]);
        if (j != target && (h == "date" || h == "month" || h == "time" || h == "timestamp")) {
            stamp_col = j;
            break;
        }
    }

    TimeSeries series;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        ++row;
        const auto cells = detail::split_csv_line(line);
        if (target >= cells.size())
            throw ConfigError("row " + std::to_string(row) + ": missing column '" + header[target] + "'");
        double v = 0.0;
        if (!detail::parse_double(cells[target], v))
            throw ConfigError("row " + std::to_string(row) + ": cannot parse '" + cells[target] +
                              "' as a finite number");
        series.values.push_back(v);
        if (stamp_col < header.size()) series.timestamps.push_back(stamp_col < cells.size() ? cells[stamp_col] : "");
    }
    if (series.values.empty()) throw ConfigError("no observations in '" + path + "'");
    check_series(series);
    return series;
}

/// x_t = log(y_t / y_{t-1}); labels of the first observation are dropped.
inline TimeSeries log_returns(const TimeSeries& series) {
    if (series.size() < 2) throw ConfigError("log returns need at least 2 observations");
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (!(series.values[i] > 0.0))
            throw ConfigError("log returns need positive values; index " + std::to_string(i) + " is " +
                              std::to_string(series.values[i]));
    }
    TimeSeries out;
    out.values.reserve(series.size() - 1);
    for (std::size_t i = 1; i < series.size(); ++i) out.values.push_back(std::log(series.values[i] / series.values[i - 1]));
    if (!series.timestamps.empty()) out.timestamps.assign(series.timestamps.begin() + 1, series.timestamps.end());
    return out;
}

/// Train/test split keeping the last `test_len` points for testing.
inline std::pair<TimeSeries, TimeSeries> split(const TimeSeries& series, std::size_t test_len) {
    if (test_len == 0 || test_len >= series.size())
        throw ConfigError("test length " + std::to_string(test_len) + " must lie in (0, " +
                          std::to_string(series.size()) + ")");
    const auto cut = static_cast<std::ptrdiff_t>(series.size() - test_len);
    TimeSeries train, test;
    train.values.assign(series.values.begin(), series.values.begin() + cut);
    test.values.assign(series.values.begin() + cut, series.values.end());
    if (!series.timestamps.empty()) {
        train.timestamps.assign(series.timestamps.begin(), series.timestamps.begin() + cut);
        test.timestamps.assign(series.timestamps.begin() + cut, series.timestamps.end());
    }
    return {std::move(train), std::move(test)};
}

inline TimeSeries concat(const TimeSeries& a, const TimeSeries& b) {
    TimeSeries out = a;
    out.values.insert(out.values.end(), b.values.begin(), b.values.end());
    if (!a.timestamps.empty() && !b.timestamps.empty())
        out.timestamps.insert(out.timestamps.end(), b.timestamps.begin(), b.timestamps.end());
    else
        out.timestamps.clear();
    return out;
}

/// FNV-1a over the raw bytes of the values; identifies a realization.
inline std::uint64_t digest(std::span<const double> values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace tarma
