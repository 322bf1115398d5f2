#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ecdm/error.hpp"
#include "ecdm/series.hpp"
#include "ecdm/time.hpp"

namespace ecdm {

struct IntervalTable {
    std::vector<TimePoint> timestamps;
    std::vector<double> z_max;
    std::vector<std::string> level_tags;
    /// lower[g][k], upper[g][k]
    std::vector<std::vector<double>> lower, upper;
};

inline IntervalTable parse_interval_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty interval CSV");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 2 || header[0] != "timestamp" || header[1] != "z_max")
        throw IoError("interval CSV must start with timestamp,z_max");
    if ((header.size() - 2) % 2 != 0) throw IoError("interval CSV has an unpaired bound column");
    IntervalTable t;
    for (std::size_t c = 2; c < header.size(); c += 2) {
        if (header[c].rfind("lo_", 0) != 0 || header[c + 1] != "hi_" + header[c].substr(3))
            throw IoError("interval CSV bound columns must come in lo_X,hi_X pairs");
        t.level_tags.push_back(header[c].substr(3));
    }
    t.lower.resize(t.level_tags.size());
    t.upper.resize(t.level_tags.size());
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) throw IoError("interval CSV row " + std::to_string(row) + " has wrong width");
        t.timestamps.push_back(parse_timestamp(cells[0]));
        t.z_max.push_back(detail::parse_cell(cells[1], row));
        for (std::size_t g = 0; g < t.level_tags.size(); ++g) {
            t.lower[g].push_back(detail::parse_cell(cells[2 + 2 * g], row));
            t.upper[g].push_back(detail::parse_cell(cells[3 + 2 * g], row));
        }
    }
    if (t.timestamps.empty()) throw IoError("interval CSV has no rows");
    return t;
}

/// timestamp -> value from a CSV with a `timestamp` column and `column`.
inline std::map<TimePoint, double> parse_actual_csv(std::istream& in, const std::string& column = "net_load") {
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty actuals CSV");
    const auto header = detail::split_csv_line(line);
    const auto ts = std::find(header.begin(), header.end(), "timestamp");
    auto col = std::find(header.begin(), header.end(), column);
    if (col == header.end()) col = std::find(header.begin(), header.end(), "actual");
    if (ts == header.end() || col == header.end())
        throw IoError("actuals CSV needs 'timestamp' and '" + column + "' columns");
    const auto ti = static_cast<std::size_t>(ts - header.begin()), ci = static_cast<std::size_t>(col - header.begin());
    std::map<TimePoint, double> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) throw IoError("actuals CSV row " + std::to_string(row) + " has wrong width");
        out[parse_timestamp(cells[ti])] = detail::parse_cell(cells[ci], row);
    }
    return out;
}

/// Fan chart: one shaded band per level (widest first), the actual line and the z_max line.
inline std::string render_fan_chart(const IntervalTable& t, const std::map<TimePoint, double>& actual) {
    std::vector<double> act;
    for (const auto& ts : t.timestamps) {
        const auto it = actual.find(ts);
        if (it == actual.end()) throw PreconditionError("no actual value at " + format_timestamp(ts));
        act.push_back(it->second);
    }
    double lo = *std::min_element(act.begin(), act.end()), hi = *std::max_element(act.begin(), act.end());
    auto widen = [&](const std::vector<double>& v) {
        lo = std::min(lo, *std::min_element(v.begin(), v.end()));
        hi = std::max(hi, *std::max_element(v.begin(), v.end()));
    };
    widen(t.z_max);
    for (std::size_t g = 0; g < t.level_tags.size(); ++g) {
        widen(t.lower[g]);
        widen(t.upper[g]);
    }
    if (hi == lo) {
        hi += 1.0;
        lo -= 1.0;
    }
    constexpr double W = 960, H = 360, L = 60, R = 20, T = 20, B = 40;
    const std::size_t n = t.timestamps.size();
    auto x = [&](std::size_t k) { return L + (W - L - R) * (n > 1 ? static_cast<double>(k) / static_cast<double>(n - 1) : 0.5); };
    auto y = [&](double v) { return T + (H - T - B) * (hi - v) / (hi - lo); };
    char buf[64];
    auto pt = [&](std::size_t k, double v) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x(k), y(v));
        return std::string(buf);
    };

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W << "\" height=\"" << H << "\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    const std::size_t levels = t.level_tags.size();
    for (std::size_t gi = levels; gi-- > 0;) {
        std::string pts;
        for (std::size_t k = 0; k < n; ++k) pts += pt(k, t.upper[gi][k]);
        for (std::size_t k = n; k-- > 0;) pts += pt(k, t.lower[gi][k]);
        const double opacity = 0.15 + 0.5 * static_cast<double>(levels - gi) / static_cast<double>(levels + 1);
        std::snprintf(buf, sizeof buf, "%.2f", opacity);
        svg << "<polygon class=\"band\" data-level=\"" << t.level_tags[gi] << "\" fill=\"#1f77b4\" fill-opacity=\"" << buf
            << "\" stroke=\"none\" points=\"" << pts << "\"/>\n";
    }
    std::string pa, pz;
    for (std::size_t k = 0; k < n; ++k) {
        pa += pt(k, act[k]);
        pz += pt(k, t.z_max[k]);
    }
    svg << "<polyline class=\"actual\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"" << pa << "\"/>\n"
        << "<polyline class=\"z_max\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"4 2\" points=\""
        << pz << "\"/>\n";
    svg << "<text x=\"" << L << "\" y=\"" << H - 12 << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << format_timestamp(t.timestamps.front()) << " .. " << format_timestamp(t.timestamps.back()) << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.1f", hi);
    svg << "<text x=\"4\" y=\"" << T + 10 << "\" font-family=\"sans-serif\" font-size=\"12\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.1f", lo);
    svg << "<text x=\"4\" y=\"" << H - B << "\" font-family=\"sans-serif\" font-size=\"12\">" << buf << "</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

} // namespace ecdm
