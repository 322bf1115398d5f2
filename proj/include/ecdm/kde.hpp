#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ecdm/error.hpp"
#include "ecdm/sampler.hpp"

namespace ecdm {

struct KdeModel {
    /// Sorted ascending.
    std::vector<double> samples;
    double bandwidth = 1.0;

    std::size_t size() const { return samples.size(); }
};

/// Type-7 (linear interpolation) quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// 0.9 * min(sd, IQR / 1.34) * n^(-1/5).
inline double silverman_bandwidth(const std::vector<double>& sorted) {
    const double n = static_cast<double>(sorted.size());
    double mean = 0.0;
    for (double v : sorted) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : sorted) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const double iqr = sorted_quantile(sorted, 0.75) - sorted_quantile(sorted, 0.25);
    const double h = 0.9 * std::min(sd, iqr / 1.34) * std::pow(n, -0.2);
    return h > 0.0 ? h : 1e-6 * (1.0 + std::abs(mean));
}

inline KdeModel fit_kde(std::vector<double> samples) {
    if (samples.size() < 2) throw PreconditionError("KDE needs at least two samples");
    for (double v : samples)
        if (!std::isfinite(v)) throw NumericError("non-finite KDE sample");
    std::sort(samples.begin(), samples.end());
    KdeModel m;
    m.bandwidth = silverman_bandwidth(samples);
    m.samples = std::move(samples);
    return m;
}

inline double pdf(const KdeModel& m, double z) {
    const double inv_h = 1.0 / m.bandwidth;
    double s = 0.0;
    for (double zi : m.samples) {
        const double u = (z - zi) * inv_h;
        s += std::exp(-0.5 * u * u);
    }
    return s * inv_h / (static_cast<double>(m.size()) * std::sqrt(2.0 * std::numbers::pi));
}

inline double cdf(const KdeModel& m, double z) {
    double s = 0.0;
    for (double zi : m.samples) s += 0.5 * std::erfc(-(z - zi) / (m.bandwidth * std::numbers::sqrt2));
    return s / static_cast<double>(m.size());
}

inline double quantile(const KdeModel& m, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw PreconditionError("quantile level must lie in (0, 1)");
    double lo = m.samples.front() - 10.0 * m.bandwidth, hi = m.samples.back() + 10.0 * m.bandwidth;
    while (cdf(m, lo) > alpha) lo -= 10.0 * m.bandwidth;
    while (cdf(m, hi) < alpha) hi += 10.0 * m.bandwidth;
    const double tol = 1e-6 * m.bandwidth;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        (cdf(m, mid) < alpha ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct DensityPeak {
    /// 0-based position in the sorted samples.
    std::size_t index;
    double value;
};

/// argmax of the density over the sample points; ties go to the smallest index.
inline DensityPeak max_density_point(const KdeModel& m) {
    std::size_t best = 0;
    double best_f = -1.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double f = pdf(m, m.samples[i]);
        if (f > best_f) {
            best_f = f;
            best = i;
        }
    }
    return {best, m.samples[best]};
}

struct Interval {
    double lower;
    double upper;
};

/// Sample-point interval of n_gamma + 1 points around the density peak, shifted inward at the ends.
inline Interval adaptive_interval(const KdeModel& m, double gamma, std::optional<std::size_t> peak = std::nullopt) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw PreconditionError("interval level must lie in (0, 1)");
    const long n = static_cast<long>(m.size());
    const long ng = static_cast<long>(std::nearbyint(gamma * static_cast<double>(n)));
    const long c = static_cast<long>(peak ? *peak : max_density_point(m).index) + 1;
    long lo, hi;
    if (c - ng < 1) {
        lo = 1;
        hi = 1 + ng;
    } else if (c + ng > n) {
        lo = n - ng;
        hi = n;
    } else {
        lo = c - ng / 2;
        hi = c + (ng + 1) / 2;
    }
    lo = std::clamp(lo, 1L, n);
    hi = std::clamp(hi, 1L, n);
    return {m.samples[static_cast<std::size_t>(lo - 1)], m.samples[static_cast<std::size_t>(hi - 1)]};
}

inline Interval symmetric_interval(const KdeModel& m, double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw PreconditionError("interval level must lie in (0, 1)");
    return {quantile(m, (1.0 - gamma) / 2.0), quantile(m, (1.0 + gamma) / 2.0)};
}

enum class IntervalKind { adaptive, symmetric };

inline IntervalKind parse_interval_kind(const std::string& s) {
    if (s == "adaptive") return IntervalKind::adaptive;
    if (s == "symmetric") return IntervalKind::symmetric;
    throw ConfigError("interval kind must be 'adaptive' or 'symmetric', got '" + s + "'");
}

inline const char* to_string(IntervalKind k) { return k == IntervalKind::adaptive ? "adaptive" : "symmetric"; }

struct IntervalForecast {
    std::vector<TimePoint> timestamps;
    std::vector<double> z_max;
    /// KDE median, the point forecast for symmetric intervals.
    std::vector<double> median;
    std::vector<double> gammas;
    /// bounds[g][k]
    std::vector<std::vector<Interval>> bounds;
    IntervalKind kind = IntervalKind::adaptive;
    std::vector<std::size_t> degenerate_steps;

    std::size_t horizon() const { return z_max.size(); }
    const std::vector<double>& point() const { return kind == IntervalKind::adaptive ? z_max : median; }
};

inline void validate_gammas(const std::vector<double>& gammas) {
    if (gammas.empty()) throw ConfigError("at least one interval level is required");
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        if (!(gammas[i] > 0.0 && gammas[i] < 1.0)) throw ConfigError("interval levels must lie in (0, 1)");
        if (i > 0 && !(gammas[i] > gammas[i - 1])) throw ConfigError("interval levels must be strictly increasing");
    }
}

inline IntervalForecast interval_forecast(const Matrix<double>& scenarios, const std::vector<TimePoint>& timestamps,
                                          const std::vector<double>& gammas, IntervalKind kind) {
    if (scenarios.rows < 2) throw PreconditionError("interval forecast needs at least two scenarios");
    validate_gammas(gammas);
    IntervalForecast f;
    f.timestamps = timestamps;
    f.gammas = gammas;
    f.kind = kind;
    f.bounds.assign(gammas.size(), {});
    for (std::size_t k = 0; k < scenarios.cols; ++k) {
        std::vector<double> col(scenarios.rows);
        for (std::size_t i = 0; i < col.size(); ++i) col[i] = scenarios(i, k);
        const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
        if (*mn == *mx) {
            f.degenerate_steps.push_back(k);
            f.z_max.push_back(*mn);
            f.median.push_back(*mn);
            for (auto& b : f.bounds) b.push_back({*mn, *mn});
            continue;
        }
        const KdeModel m = fit_kde(std::move(col));
        const DensityPeak peak = max_density_point(m);
        f.z_max.push_back(peak.value);
        f.median.push_back(quantile(m, 0.5));
        for (std::size_t g = 0; g < gammas.size(); ++g)
            f.bounds[g].push_back(kind == IntervalKind::adaptive ? adaptive_interval(m, gammas[g], peak.index)
                                                                 : symmetric_interval(m, gammas[g]));
    }
    return f;
}

inline std::vector<TimePoint> forecast_timestamps(const ArrangedWindow& w, std::chrono::seconds step) {
    std::vector<TimePoint> ts;
    const TimePoint start{std::chrono::sys_days{w.forecast_day}};
    for (std::size_t k = 0; k < w.points_per_day; ++k) ts.push_back(start + step * static_cast<long long>(k));
    return ts;
}

inline IntervalForecast interval_forecast(const ScenarioSet& set, const std::vector<double>& gammas, IntervalKind kind,
                                          std::chrono::seconds step = std::chrono::seconds{900}) {
    return interval_forecast(set.scenarios, forecast_timestamps(set.window_ref, step), gammas, kind);
}

inline std::string level_tag(double gamma) { return std::to_string(static_cast<int>(std::lround(gamma * 100.0))); }

inline std::string interval_csv(const IntervalForecast& f) {
    std::string out = "timestamp,z_max";
    for (double g : f.gammas) out += ",lo_" + level_tag(g) + ",hi_" + level_tag(g);
    out += '\n';
    for (std::size_t k = 0; k < f.horizon(); ++k) {
        out += format_timestamp(f.timestamps[k]) + "," + format_number(f.z_max[k]);
        for (std::size_t g = 0; g < f.gammas.size(); ++g)
            out += "," + format_number(f.bounds[g][k].lower) + "," + format_number(f.bounds[g][k].upper);
        out += '\n';
    }
    return out;
}

} // namespace ecdm
