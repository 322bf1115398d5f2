#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ecdm/error.hpp"
#include "ecdm/time.hpp"

namespace ecdm {

enum class ChannelRole { load, pv, wind, net_load, weather };

inline const char* to_string(ChannelRole role) {
    switch (role) {
    case ChannelRole::load: return "load";
    case ChannelRole::pv: return "pv";
    case ChannelRole::wind: return "wind";
    case ChannelRole::net_load: return "net_load";
    case ChannelRole::weather: return "weather";
    }
    return "?";
}

struct Channel {
    std::string name;
    ChannelRole role;
    std::vector<double> values;
};

/// Half-open index range [begin, end).
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end > begin ? end - begin : 0; }
};

/// Uniformly sampled multivariate series. Sample i sits at start_time + i * step.
struct SeriesFrame {
    TimePoint start_time{};
    std::chrono::seconds step{900};
    std::vector<Channel> channels;
    /// Timestamps where at least one channel was interpolated.
    std::size_t interpolated_points = 0;
    /// max |net_load - (load - pv - wind)| over the frame, when all four are present.
    double net_load_residual_max = 0.0;

    std::size_t size() const { return channels.empty() ? 0 : channels.front().values.size(); }

    std::size_t points_per_day() const {
        return static_cast<std::size_t>(std::chrono::seconds{std::chrono::days{1}}.count() / step.count());
    }

    TimePoint time_at(std::size_t i) const { return start_time + step * static_cast<long long>(i); }

    const Channel* find(std::string_view name) const {
        for (const auto& c : channels)
            if (c.name == name) return &c;
        return nullptr;
    }

    const Channel* find(ChannelRole role) const {
        for (const auto& c : channels)
            if (c.role == role) return &c;
        return nullptr;
    }

    const std::vector<double>& values(ChannelRole role) const {
        const Channel* c = find(role);
        if (!c) throw PreconditionError(std::string("frame has no ") + to_string(role) + " channel");
        return c->values;
    }

    std::vector<const Channel*> weather_channels() const {
        std::vector<const Channel*> out;
        for (const auto& c : channels)
            if (c.role == ChannelRole::weather) out.push_back(&c);
        return out;
    }

    /// Index of the sample at `tp`, if it lies on the grid.
    std::optional<std::size_t> index_of(TimePoint tp) const {
        if (tp < start_time) return std::nullopt;
        const auto offset = (tp - start_time).count();
        if (offset % step.count() != 0) return std::nullopt;
        return static_cast<std::size_t>(offset / step.count());
    }

    /// Index of midnight on `day`, if on the grid (may be >= size()).
    std::optional<std::size_t> day_start(Date day) const { return index_of(TimePoint{std::chrono::sys_days{day}}); }

    /// Index range covering [first, last] inclusive, clipped to whole days inside the frame.
    IndexRange day_range(Date first, Date last) const {
        const TimePoint lo{std::chrono::sys_days{first}};
        const TimePoint hi{std::chrono::sys_days{add_days(last, 1)}};
        IndexRange r;
        r.begin = lo <= start_time ? 0 : static_cast<std::size_t>((lo - start_time + step - std::chrono::seconds{1}) / step);
        r.end = hi <= start_time ? 0 : std::min(size(), static_cast<std::size_t>((hi - start_time) / step));
        if (r.end < r.begin) r.end = r.begin;
        return r;
    }
};

/// Column name -> role. Names not listed are ignored.
using Schema = std::map<std::string, ChannelRole>;

/// load, pv, wind (required), net_load and weather_* (taken when present).
inline Schema default_schema(const std::vector<std::string>& header) {
    Schema schema{{"load", ChannelRole::load}, {"pv", ChannelRole::pv}, {"wind", ChannelRole::wind}};
    for (const auto& h : header) {
        if (h == "net_load") schema[h] = ChannelRole::net_load;
        if (h.rfind("weather_", 0) == 0) schema[h] = ChannelRole::weather;
    }
    return schema;
}

struct CsvLoadOptions {
    std::optional<Schema> schema;
    /// Longest run of missing samples that is filled by linear interpolation.
    std::size_t max_gap = 4;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    for (auto& s : out) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    }
    return out;
}

inline double parse_cell(const std::string& s, std::size_t row) {
    if (s.empty() || s == "NaN" || s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
        throw IoError("row " + std::to_string(row) + ": cannot parse number '" + s + "'");
    return v;
}

} // namespace detail

/// Reads `timestamp,load,pv,wind[,net_load][,weather_*...]`.
///
/// Missing rows and empty cells are linearly interpolated when a run spans at most
/// `max_gap` samples. net_load is synthesized as load - pv - wind when absent.
inline SeriesFrame load_csv(std::istream& in, const CsvLoadOptions& options = {}) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty CSV input");
    const auto header = detail::split_csv_line(line);
    if (header.empty() || header.front() != "timestamp") throw IoError("first CSV column must be 'timestamp'");
    const Schema schema = options.schema ? *options.schema : default_schema(header);

    std::vector<std::pair<std::string, std::size_t>> columns; // schema name -> column index
    for (const auto& [name, role] : schema) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw IoError("missing required column '" + name + "'");
        columns.emplace_back(name, static_cast<std::size_t>(it - header.begin()));
    }

    std::vector<TimePoint> stamps;
    std::vector<std::vector<double>> raw(columns.size());
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw IoError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields");
        stamps.push_back(parse_timestamp(cells[0]));
        for (std::size_t c = 0; c < columns.size(); ++c) raw[c].push_back(detail::parse_cell(cells[columns[c].second], row));
    }
    if (stamps.size() < 2) throw IoError("CSV needs at least two data rows");

    std::chrono::seconds step{std::numeric_limits<long long>::max()};
    for (std::size_t i = 1; i < stamps.size(); ++i) {
        const auto d = stamps[i] - stamps[i - 1];
        if (d <= std::chrono::seconds{0})
            throw IoError("non-monotonic timestamps at row " + std::to_string(i + 2));
        step = std::min(step, d);
    }
    if (std::chrono::seconds{std::chrono::days{1}}.count() % step.count() != 0)
        throw IoError("sampling step of " + std::to_string(step.count()) + " s does not divide 24 h");
    for (std::size_t i = 1; i < stamps.size(); ++i) {
        if ((stamps[i] - stamps[i - 1]).count() % step.count() != 0)
            throw IoError("non-uniform timestamps at row " + std::to_string(i + 2));
    }

    SeriesFrame frame;
    frame.start_time = stamps.front();
    frame.step = step;
    const auto n = static_cast<std::size_t>((stamps.back() - stamps.front()) / step) + 1;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        Channel ch{columns[c].first, schema.at(columns[c].first),
                   std::vector<double>(n, std::numeric_limits<double>::quiet_NaN())};
        for (std::size_t i = 0; i < stamps.size(); ++i)
            ch.values[static_cast<std::size_t>((stamps[i] - frame.start_time) / step)] = raw[c][i];
        frame.channels.push_back(std::move(ch));
    }

    std::vector<bool> filled(n, false);
    for (auto& ch : frame.channels) {
        auto& v = ch.values;
        std::size_t i = 0;
        while (i < n) {
            if (!std::isnan(v[i])) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < n && std::isnan(v[j])) ++j;
            const std::size_t len = j - i;
            const std::string where = "'" + ch.name + "' samples " + format_timestamp(frame.time_at(i)) + " .. " +
                                      format_timestamp(frame.time_at(j - 1));
            if (len > options.max_gap)
                throw IoError("gap of " + std::to_string(len) + " points in " + where);
            if (i == 0 || j == n) throw IoError("gap at series boundary in " + where);
            const double a = v[i - 1], b = v[j];
            for (std::size_t k = i; k < j; ++k) {
                v[k] = a + (b - a) * static_cast<double>(k - i + 1) / static_cast<double>(len + 1);
                filled[k] = true;
            }
            i = j;
        }
    }

    frame.interpolated_points = static_cast<std::size_t>(std::count(filled.begin(), filled.end(), true));

    const Channel* load = frame.find(ChannelRole::load);
    const Channel* pv = frame.find(ChannelRole::pv);
    const Channel* wind = frame.find(ChannelRole::wind);
    if (load && pv && wind) {
        const Channel* net = frame.find(ChannelRole::net_load);
        if (!net) {
            Channel synth{"net_load", ChannelRole::net_load, std::vector<double>(n)};
            for (std::size_t i = 0; i < n; ++i) synth.values[i] = load->values[i] - pv->values[i] - wind->values[i];
            frame.channels.push_back(std::move(synth));
        } else {
            for (std::size_t i = 0; i < n; ++i)
                frame.net_load_residual_max =
                    std::max(frame.net_load_residual_max,
                             std::abs(net->values[i] - (load->values[i] - pv->values[i] - wind->values[i])));
        }
    } else if (!frame.find(ChannelRole::net_load)) {
        throw IoError("schema needs either net_load or all of load, pv, wind");
    }
    return frame;
}

inline SeriesFrame load_csv(const std::string& path, const CsvLoadOptions& options = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open data file '" + path + "'");
    return load_csv(in, options);
}

} // namespace ecdm
