#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>

#include "ecdm/series.hpp"
#include "ecdm/time.hpp"

namespace ecdm {

struct SynthConfig {
    Date start = Date{std::chrono::year{2017}, std::chrono::month{3}, std::chrono::day{1}};
    int days = 140;
    std::uint64_t seed = 7;
    int points_per_day = 96;
    double load_scale = 1200.0;
    double pv_capacity = 450.0;
    double wind_capacity = 300.0;
};

/// Synthetic prosumer series: weekday-modulated two-peak load with a temperature term,
/// cloud-driven PV, weather-driven wind, and the matching weather channels.
inline SeriesFrame synthesize(const SynthConfig& cfg) {
    if (cfg.days < 1 || cfg.points_per_day < 1 || 86400 % cfg.points_per_day != 0)
        throw ConfigError("synth: days and points_per_day must be positive and divide a day");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    constexpr double weekday_factor[7] = {1.0, 1.01, 1.0, 0.99, 0.96, 0.84, 0.78};
    const std::size_t ppd = static_cast<std::size_t>(cfg.points_per_day);
    const std::size_t n = ppd * static_cast<std::size_t>(cfg.days);

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;

    SeriesFrame f;
    f.start_time = TimePoint{std::chrono::sys_days{cfg.start}};
    f.step = std::chrono::seconds{86400 / cfg.points_per_day};
    std::vector<double> load(n), pv(n), wind(n), net(n), temp(n), irr(n), ws(n);

    const auto year_start = std::chrono::sys_days{cfg.start.year() / std::chrono::January / 1};
    double wind_level = 6.0, load_noise = 0.0, cloud = 0.4;
    for (int d = 0; d < cfg.days; ++d) {
        const Date date = add_days(cfg.start, d);
        const double doy = static_cast<double>((std::chrono::sys_days{date} - year_start).count());
        const int dow = weekday_index(date);
        cloud = std::clamp(0.35 * cloud + 0.65 * unif(rng), 0.0, 1.0);
        wind_level = std::max(0.5, 6.0 + 0.6 * (wind_level - 6.0) + 2.4 * normal(rng));
        const double temp_offset = 2.0 * normal(rng);
        const double day_level = 1.0 + 0.03 * normal(rng);
        const double wind_phase = two_pi * unif(rng);
        const double season = 0.8 + 0.15 * std::sin(two_pi * (doy - 80.0) / 365.0);
        for (std::size_t k = 0; k < ppd; ++k) {
            const std::size_t i = static_cast<std::size_t>(d) * ppd + k;
            const double h = 24.0 * static_cast<double>(k) / static_cast<double>(ppd);
            const double bell = h > 6.0 && h < 20.0 ? std::pow(std::sin(std::numbers::pi * (h - 6.0) / 14.0), 1.5) : 0.0;
            irr[i] = std::max(0.0, 1000.0 * season * bell * (1.0 - 0.8 * cloud) * (1.0 + 0.03 * normal(rng)));
            pv[i] = cfg.pv_capacity * irr[i] / 1000.0;

            ws[i] = std::max(0.0, wind_level + 1.2 * std::sin(two_pi * h / 24.0 + wind_phase) + 0.3 * normal(rng));
            const double u = std::clamp((ws[i] - 3.0) / 9.0, 0.0, 1.0);
            wind[i] = cfg.wind_capacity * u * u * u;

            temp[i] = 12.0 + 4.0 * std::sin(two_pi * (doy - 110.0) / 365.0) + 4.0 * std::sin(two_pi * (h - 9.0) / 24.0) +
                      temp_offset + 0.3 * normal(rng);
            const double shape = 0.72 + 0.16 * std::exp(-(h - 8.5) * (h - 8.5) / 5.0) +
                                 0.22 * std::exp(-(h - 19.0) * (h - 19.0) / 6.0) +
                                 0.08 * std::sin(std::numbers::pi * std::clamp((h - 6.0) / 16.0, 0.0, 1.0));
            load_noise = 0.9 * load_noise + 6.0 * normal(rng);
            load[i] = cfg.load_scale * day_level * weekday_factor[dow] * shape + 9.0 * std::max(0.0, 16.0 - temp[i]) + load_noise;
        }
    }
    auto round4 = [](double v) { return std::round(v * 1e4) / 1e4; };
    for (std::size_t i = 0; i < n; ++i) {
        load[i] = round4(load[i]);
        pv[i] = round4(pv[i]);
        wind[i] = round4(wind[i]);
        net[i] = round4(load[i] - pv[i] - wind[i]);
        temp[i] = round4(temp[i]);
        irr[i] = round4(irr[i]);
        ws[i] = round4(ws[i]);
    }
    f.channels = {{"load", ChannelRole::load, std::move(load)},
                  {"pv", ChannelRole::pv, std::move(pv)},
                  {"wind", ChannelRole::wind, std::move(wind)},
                  {"net_load", ChannelRole::net_load, std::move(net)},
                  {"weather_temperature", ChannelRole::weather, std::move(temp)},
                  {"weather_irradiance", ChannelRole::weather, std::move(irr)},
                  {"weather_wind_speed", ChannelRole::weather, std::move(ws)}};
    return f;
}

inline std::string frame_csv(const SeriesFrame& frame) {
    std::string out = "timestamp";
    for (const auto& c : frame.channels) out += "," + c.name;
    out += '\n';
    char buf[64];
    for (std::size_t i = 0; i < frame.size(); ++i) {
        out += format_timestamp(frame.time_at(i));
        for (const auto& c : frame.channels) {
            std::snprintf(buf, sizeof buf, ",%.4f", c.values[i]);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

} // namespace ecdm
