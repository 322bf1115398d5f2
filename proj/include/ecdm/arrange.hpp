#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ecdm/error.hpp"
#include "ecdm/matrix.hpp"
#include "ecdm/normalize.hpp"
#include "ecdm/series.hpp"
#include "ecdm/time.hpp"

namespace ecdm {

inline constexpr std::size_t kCalendarFeatures = 5;
inline constexpr int kWindowDays = 7;

/// One row per forecast-day timestep: normalized weather channels, then
/// sin/cos hour-of-day, sin/cos day-of-week, weekend flag.
struct ConditionTokens {
    Matrix<double> tokens;
    std::vector<std::string> feature_names;

    std::size_t count() const { return tokens.rows; }
    std::size_t width() const { return tokens.cols; }
};

/// A 7-day window laid out Monday..Sunday with the forecast day at its weekday slot.
struct ArrangedWindow {
    std::vector<double> values;
    /// true = observed history, false = forecast day.
    std::vector<bool> mask;
    int forecast_weekday = 0;
    /// arranged position -> chronological index within the window.
    std::vector<std::size_t> source_indices;
    ConditionTokens conditions;
    Date forecast_day{};
    std::size_t points_per_day = 0;

    std::size_t length() const { return values.size(); }
    std::size_t forecast_offset() const { return static_cast<std::size_t>(forecast_weekday) * points_per_day; }
};

enum class WindowMode { training, inference };

/// Calendar encodings for the sample at `tp`.
inline std::array<double, kCalendarFeatures> calendar_features(TimePoint tp) {
    using namespace std::chrono;
    const auto day = floor<days>(tp);
    const double hour_frac = static_cast<double>((tp - day).count()) / 86400.0;
    const int dow = weekday_index(Date{day});
    constexpr double two_pi = 2.0 * std::numbers::pi;
    return {std::sin(two_pi * hour_frac), std::cos(two_pi * hour_frac), std::sin(two_pi * dow / 7.0),
            std::cos(two_pi * dow / 7.0), dow >= 5 ? 1.0 : 0.0};
}

inline ConditionTokens build_conditions(const SeriesFrame& frame, std::size_t day_begin, const NormStats& stats) {
    const std::size_t ppd = frame.points_per_day();
    if (day_begin + ppd > frame.size()) throw PreconditionError("conditions requested beyond the end of the frame");
    const auto weather = frame.weather_channels();
    ConditionTokens c;
    c.tokens = Matrix<double>(ppd, weather.size() + kCalendarFeatures);
    for (const auto* w : weather) c.feature_names.push_back(w->name);
    for (const char* n : {"hour_sin", "hour_cos", "dow_sin", "dow_cos", "weekend"}) c.feature_names.emplace_back(n);
    for (std::size_t k = 0; k < ppd; ++k) {
        for (std::size_t j = 0; j < weather.size(); ++j)
            c.tokens(k, j) = stats.at(weather[j]->name).normalize(weather[j]->values[day_begin + k]);
        const auto cal = calendar_features(frame.time_at(day_begin + k));
        for (std::size_t j = 0; j < kCalendarFeatures; ++j) c.tokens(k, weather.size() + j) = cal[j];
    }
    return c;
}

/// Arranged position -> chronological position for a 7-day window ending on a day with
/// weekday `forecast_weekday` (Monday = 0).
inline std::vector<std::size_t> weekly_permutation(int forecast_weekday, std::size_t points_per_day) {
    std::vector<std::size_t> src(kWindowDays * points_per_day);
    for (int slot = 0; slot < kWindowDays; ++slot) {
        // chronological day k (0..6, 6 = forecast) has weekday (forecast_weekday + 1 + k) mod 7
        const int k = ((slot - forecast_weekday - 1) % kWindowDays + kWindowDays) % kWindowDays;
        for (std::size_t i = 0; i < points_per_day; ++i)
            src[static_cast<std::size_t>(slot) * points_per_day + i] = static_cast<std::size_t>(k) * points_per_day + i;
    }
    return src;
}

/// Values of a named channel, with `res` derived as pv + wind.
inline std::vector<double> channel_values(const SeriesFrame& frame, const std::string& name) {
    if (const Channel* c = frame.find(name)) return c->values;
    if (name == kResChannel) {
        const auto& pv = frame.values(ChannelRole::pv);
        const auto& wind = frame.values(ChannelRole::wind);
        std::vector<double> out(pv.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = pv[i] + wind[i];
        return out;
    }
    throw PreconditionError("frame has no channel '" + name + "'");
}

/// First sample index of the chronological 7-day window ending on `day`.
inline std::size_t window_begin(const SeriesFrame& frame, Date day) {
    const auto start = frame.day_start(day);
    const std::size_t ppd = frame.points_per_day();
    if (!start || *start + ppd > frame.size())
        throw PreconditionError("forecast day " + format_date(day) + " is not fully contained in the data");
    if (*start < (kWindowDays - 1) * ppd)
        throw PreconditionError("incomplete preceding window: " + format_date(day) + " needs 6 full days of history");
    return *start - (kWindowDays - 1) * ppd;
}

/// Normalized, weekly-arranged copy of one channel.
inline std::vector<double> arrange_channel(const std::vector<double>& series, std::size_t begin,
                                           const std::vector<std::size_t>& src, const ChannelStats& stats,
                                           std::size_t forecast_offset, std::size_t ppd, WindowMode mode) {
    std::vector<double> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = stats.normalize(series[begin + src[i]]);
    if (mode == WindowMode::inference)
        for (std::size_t i = 0; i < ppd; ++i) out[forecast_offset + i] = 0.0;
    return out;
}

inline ArrangedWindow weekly_arrange(const SeriesFrame& frame, Date forecast_day, const NormStats& stats,
                                     WindowMode mode = WindowMode::training) {
    const std::size_t begin = window_begin(frame, forecast_day);
    const std::size_t ppd = frame.points_per_day();
    ArrangedWindow w;
    w.forecast_day = forecast_day;
    w.points_per_day = ppd;
    w.forecast_weekday = weekday_index(forecast_day);
    w.source_indices = weekly_permutation(w.forecast_weekday, ppd);
    w.values = arrange_channel(frame.values(ChannelRole::net_load), begin, w.source_indices,
                               stats.at(frame.find(ChannelRole::net_load)->name), w.forecast_offset(), ppd, mode);
    w.mask.assign(w.values.size(), true);
    for (std::size_t i = 0; i < ppd; ++i) w.mask[w.forecast_offset() + i] = false;
    w.conditions = build_conditions(frame, begin + (kWindowDays - 1) * ppd, stats);
    return w;
}

/// Restores chronological order.
inline std::vector<double> dearrange(std::span<const double> values, std::span<const std::size_t> source_indices) {
    require_same_size(values.size(), source_indices.size(), "dearrange");
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[source_indices[i]] = values[i];
    return out;
}

inline std::vector<double> weekly_dearrange(const ArrangedWindow& window) {
    return dearrange(window.values, window.source_indices);
}

/// Days inside `range` that have 6 complete preceding days also inside `range`.
inline std::vector<Date> eligible_days(const SeriesFrame& frame, IndexRange range) {
    const std::size_t ppd = frame.points_per_day();
    std::vector<Date> days;
    if (range.end > frame.size()) range.end = frame.size();
    const auto first_day = std::chrono::ceil<std::chrono::days>(frame.time_at(range.begin));
    for (auto d = first_day;; d += std::chrono::days{1}) {
        const auto idx = frame.index_of(TimePoint{d});
        if (!idx || *idx + ppd > range.end) break;
        if (*idx >= range.begin + (kWindowDays - 1) * ppd) days.push_back(Date{d});
    }
    return days;
}

inline std::vector<ArrangedWindow> make_dataset(const SeriesFrame& frame, const NormStats& stats, IndexRange range) {
    const auto days = eligible_days(frame, range);
    if (days.empty()) throw PreconditionError("dataset range too short: needs at least 7 whole days");
    std::vector<ArrangedWindow> out;
    out.reserve(days.size());
    for (const auto& d : days) out.push_back(weekly_arrange(frame, d, stats, WindowMode::training));
    return out;
}

} // namespace ecdm
