#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ecdm/arrange.hpp"
#include "ecdm/sampler.hpp"
#include "ecdm/trainer.hpp"

namespace ecdm {

inline const std::array<std::string, 3> kMultiChannels = {"load", kResChannel, "net_load"};

/// Stacked (load, RES, net load) window sharing one mask.
struct MultiWindow {
    /// [3 x length], rows in kMultiChannels order, normalized per channel.
    Matrix<double> values;
    std::vector<bool> mask;
    ConditionTokens conditions;
    std::array<ChannelStats, 3> stats;
    std::vector<std::size_t> source_indices;
    Date forecast_day{};
    int forecast_weekday = 0;
    std::size_t points_per_day = 0;

    std::size_t length() const { return values.cols; }
    std::size_t forecast_offset() const { return static_cast<std::size_t>(forecast_weekday) * points_per_day; }

    /// Single-channel view carrying the forecast-day metadata.
    ArrangedWindow channel_window(std::size_t row) const {
        ArrangedWindow w;
        w.values.assign(values.row(row).begin(), values.row(row).end());
        w.mask = mask;
        w.forecast_weekday = forecast_weekday;
        w.source_indices = source_indices;
        w.conditions = conditions;
        w.forecast_day = forecast_day;
        w.points_per_day = points_per_day;
        return w;
    }
};

struct DpsConfig {
    double zeta = 1.0;
    /// Measurement noise std of the normalized residual.
    double sigma_meas = 0.05;
    /// Scale the step by sigma^2 / (sigma^2 + k (1 - abar_t) / abar_t), the share of the residual
    /// variance not explained by the uncertainty of x0_hat. false applies zeta unweighted.
    bool variance_weighting = true;
};

inline void validate(const DpsConfig& c) {
    if (!std::isfinite(c.zeta) || c.zeta < 0.0) throw ConfigError("dps.zeta must be finite and >= 0");
    if (!(c.sigma_meas > 0.0)) throw ConfigError("dps.sigma_meas must be > 0");
}

inline std::array<ChannelStats, 3> multi_stats(const NormStats& stats) {
    return {stats.at(kMultiChannels[0]), stats.at(kMultiChannels[1]), stats.at(kMultiChannels[2])};
}

inline MultiWindow multi_arrange(const SeriesFrame& frame, Date forecast_day, const NormStats& stats,
                                 WindowMode mode = WindowMode::training) {
    const ArrangedWindow base = weekly_arrange(frame, forecast_day, stats, mode);
    const std::size_t begin = window_begin(frame, forecast_day);
    MultiWindow w;
    w.values = Matrix<double>(3, base.length());
    w.mask = base.mask;
    w.conditions = base.conditions;
    w.stats = multi_stats(stats);
    w.source_indices = base.source_indices;
    w.forecast_day = base.forecast_day;
    w.forecast_weekday = base.forecast_weekday;
    w.points_per_day = base.points_per_day;
    for (std::size_t r = 0; r < 3; ++r) {
        const auto row = arrange_channel(channel_values(frame, kMultiChannels[r]), begin, base.source_indices,
                                         w.stats[r], base.forecast_offset(), base.points_per_day, mode);
        std::copy(row.begin(), row.end(), w.values.row(r).begin());
    }
    return w;
}

inline std::vector<TrainExample> make_multi_dataset(const SeriesFrame& frame, const NormStats& stats, IndexRange range,
                                                    bool with_conditions = true) {
    const auto days = eligible_days(frame, range);
    if (days.empty()) throw PreconditionError("dataset range too short: needs at least 7 whole days");
    std::vector<TrainExample> out;
    for (const auto& d : days) {
        auto w = multi_arrange(frame, d, stats);
        TrainExample ex{std::move(w.values), std::nullopt};
        if (with_conditions) ex.conditions = std::move(w.conditions);
        out.push_back(std::move(ex));
    }
    return out;
}

/// L - RES - NL in MW for a flat [3 x n] normalized state.
inline std::vector<double> measurement_residual(std::span<const double> x, const std::array<ChannelStats, 3>& stats) {
    if (x.size() % 3 != 0) throw PreconditionError("measurement residual needs exactly 3 channel rows");
    const std::size_t n = x.size() / 3;
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i)
        r[i] = stats[0].denormalize(x[i]) - stats[1].denormalize(x[n + i]) - stats[2].denormalize(x[2 * n + i]);
    return r;
}

inline std::vector<double> measurement_residual(const Matrix<double>& x, const std::array<ChannelStats, 3>& stats) {
    if (x.rows != 3) throw PreconditionError("measurement residual needs exactly 3 channel rows");
    return measurement_residual(std::span<const double>(x.data), stats);
}

struct DpsStep {
    /// eps_theta(x_t, t).
    std::vector<double> eps;
    /// d ||A(x0_hat)||^2 / d x_t, residual measured in units of the net-load std.
    std::vector<double> gradient;
    double objective = 0.0;
};

/// Gradient of the squared consistency residual of x0_hat(x_t) with respect to x_t,
/// differentiating through the noise predictor.
template <typename T>
DpsStep dps_step(nn::UNet<T>& model, std::span<const double> xt, int t, const Matrix<T>* cond,
                 const NoiseSchedule& sched, const std::array<ChannelStats, 3>& stats) {
    if (model.config().in_channels != 3) throw PreconditionError("DPS needs a 3-channel model");
    const std::size_t n = xt.size() / 3;
    const double ab = sched.alpha_bar(sched.require_step(t));
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    typename nn::UNet<T>::Cache cache;
    const auto out = model.forward(to_tensor<T>(xt, 3), t, cond, &cache);
    DpsStep s;
    s.eps = to_flat(out);
    const auto x0 = predict_x0(xt, t, s.eps, sched);
    const double sd = stats[2].std;
    std::vector<double> r = measurement_residual(x0, stats);
    nn::Tensor<T> g(3, n);
    std::vector<double> g0(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        r[i] /= sd;
        s.objective += r[i] * r[i];
        g0[i] = 2.0 * r[i] * stats[0].std / sd;
        g0[n + i] = -2.0 * r[i] * stats[1].std / sd;
        g0[2 * n + i] = -2.0 * r[i];
    }
    for (std::size_t i = 0; i < 3 * n; ++i) g.data[i] = static_cast<T>(g0[i]);
    const auto jt = model.backward(cache, g);
    s.gradient.resize(3 * n);
    for (std::size_t i = 0; i < 3 * n; ++i) {
        s.gradient[i] = (g0[i] - b * static_cast<double>(jt.data[i])) / a;
        if (!std::isfinite(s.gradient[i])) throw NumericError("non-finite DPS gradient at step " + std::to_string(t));
    }
    return s;
}

template <typename T>
std::vector<double> dps_gradient(nn::UNet<T>& model, std::span<const double> xt, int t, const Matrix<T>* cond,
                                 const NoiseSchedule& sched, const std::array<ChannelStats, 3>& stats) {
    return dps_step(model, xt, t, cond, sched, stats).gradient;
}

/// Effective guidance scale at step t.
inline double guidance_scale(const DpsConfig& cfg, const NoiseSchedule& sched, int t,
                             const std::array<ChannelStats, 3>& stats) {
    if (!cfg.variance_weighting) return cfg.zeta;
    const double sd = stats[2].std;
    const double k = (stats[0].std * stats[0].std + stats[1].std * stats[1].std + sd * sd) / (sd * sd);
    const double ab = sched.alpha_bar(t);
    const double s2 = cfg.sigma_meas * cfg.sigma_meas;
    return cfg.zeta * s2 / (s2 + k * (1.0 - ab) / ab);
}

/// eps' = eps + sqrt(1 - abar_t) * zeta_t * grad, i.e. descent on the residual.
inline EpsFn guided_eps(NoiseModel& model, const NoiseSchedule& sched, const std::optional<Matrix<float>>& cond,
                        const std::array<ChannelStats, 3>& stats, const DpsConfig& cfg) {
    return [&model, &sched, &cond, stats, cfg](std::span<const double> xt, int t) {
        DpsStep s = dps_step(model, xt, t, cond ? &*cond : nullptr, sched, stats);
        const double scale = std::sqrt(1.0 - sched.alpha_bar(t)) * guidance_scale(cfg, sched, t, stats);
        for (std::size_t i = 0; i < s.eps.size(); ++i) s.eps[i] += scale * s.gradient[i];
        return s.eps;
    };
}

struct MultiScenarioSet {
    /// load, RES, net load in kMultiChannels order.
    std::array<ScenarioSet, 3> channels;
    /// [N x s] L - RES - NL in MW.
    Matrix<double> residual;

    std::vector<double> mean_abs_residual() const {
        std::vector<double> out(residual.rows, 0.0);
        for (std::size_t i = 0; i < residual.rows; ++i) {
            for (double v : residual.row(i)) out[i] += std::abs(v);
            out[i] /= static_cast<double>(residual.cols);
        }
        return out;
    }
};

/// Imputation sampling of the stacked window with residual guidance; zeta = 0 is the plain sampler.
inline MultiScenarioSet guided_sample(const NoiseModel& model, const NoiseSchedule& sched, const MultiWindow& window,
                                      const DpsConfig& cfg, const SamplerConfig& scfg) {
    validate(cfg);
    check_schedule(model, sched);
    if (model.config().in_channels != 3) throw PreconditionError("multi-energy sampling needs a 3-channel model");
    if (static_cast<std::size_t>(model.config().window_length) != window.length())
        throw PreconditionError("window length does not match the model");
    if (scfg.N < 1) throw ConfigError("sampler N must be >= 1");
    const bool conditional = model.config().conditional;
    std::optional<Matrix<float>> cond;
    if (conditional) cond = condition_matrix<float>(window.conditions);
    const std::size_t s = window.points_per_day, off = window.forecast_offset(), n = window.length();
    const std::size_t count = static_cast<std::size_t>(scfg.N);

    MultiScenarioSet out;
    for (std::size_t r = 0; r < 3; ++r) {
        out.channels[r].scenarios = Matrix<double>(count, s);
        out.channels[r].provenance.assign(count, conditional ? Provenance::conditional : Provenance::unconditional);
        out.channels[r].window_ref = window.channel_window(r);
    }
    out.residual = Matrix<double>(count, s);
    parallel_for(count, scfg.threads, [&](std::size_t i) {
        auto rng = scenario_rng(scfg.seed, i);
        std::vector<double> x0;
        if (cfg.zeta == 0.0) {
            x0 = impute(model_eps(model, conditional ? &window.conditions : nullptr), sched, window.values.data,
                        window.mask, rng, scfg.literal_noise_index);
        } else {
            NoiseModel local = model;
            x0 = impute(guided_eps(local, sched, cond, window.stats, cfg), sched, window.values.data, window.mask,
                        rng, scfg.literal_noise_index);
        }
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t j = 0; j < s; ++j)
                out.channels[r].scenarios(i, j) = window.stats[r].denormalize(x0[r * n + off + j]);
        for (std::size_t j = 0; j < s; ++j)
            out.residual(i, j) = out.channels[0].scenarios(i, j) - out.channels[1].scenarios(i, j) -
                                 out.channels[2].scenarios(i, j);
    });
    return out;
}

inline std::string consistency_csv(const MultiScenarioSet& set) {
    std::string out = "scenario_id,mean_abs_residual_mw\n";
    const auto m = set.mean_abs_residual();
    for (std::size_t i = 0; i < m.size(); ++i) out += std::to_string(i) + "," + format_number(m[i]) + "\n";
    return out;
}

} // namespace ecdm
