#pragma once

#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ecdm/arrange.hpp"
#include "ecdm/diffusion.hpp"
#include "ecdm/predictor.hpp"

namespace ecdm {

struct SamplerConfig {
    int N = 100;
    double p_uncond = 0.28;
    std::uint64_t seed = 0;
    /// Noise the history at level t instead of t - 1.
    bool literal_noise_index = false;
    /// Worker threads for generate_set; 0 picks the hardware concurrency.
    int threads = 0;
};

enum class Provenance { conditional, unconditional };

inline const char* to_string(Provenance p) { return p == Provenance::conditional ? "conditional" : "unconditional"; }

struct ScenarioSet {
    /// [N x s], denormalized, chronological.
    Matrix<double> scenarios;
    std::vector<Provenance> provenance;
    ArrangedWindow window_ref;

    std::size_t count() const { return scenarios.rows; }
    std::size_t horizon() const { return scenarios.cols; }
    std::vector<double> column(std::size_t k) const {
        std::vector<double> out(scenarios.rows);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = scenarios(i, k);
        return out;
    }
};

/// K = round-half-even(p_uncond * N).
inline int unconditional_count(int n, double p_uncond) {
    if (n < 1) throw ConfigError("sampler N must be >= 1");
    if (!(p_uncond >= 0.0 && p_uncond <= 1.0)) throw ConfigError("p_uncond must lie in [0, 1]");
    return static_cast<int>(std::nearbyint(p_uncond * n));
}

/// State after the blend at step t (i.e. x_{t-1}).
struct StepRecord {
    int t;
    double alpha_bar_history;
    std::span<const double> eps_history;
    std::span<const double> x;
};

using EpsFn = std::function<std::vector<double>(std::span<const double> xt, int t)>;
using StepObserver = std::function<void(const StepRecord&)>;

/// Imputation reverse diffusion on a flat channel-major state. `mask` covers one channel
/// and is shared by all channels; true marks known coordinates taken from `y0`.
inline std::vector<double> impute(const EpsFn& eps_fn, const NoiseSchedule& sched, std::span<const double> y0,
                                  const std::vector<bool>& mask, std::mt19937_64& rng, bool literal_noise_index = false,
                                  const StepObserver& observer = {}) {
    const std::size_t n = y0.size();
    if (mask.empty() || n % mask.size() != 0) throw PreconditionError("mask length does not divide the window");
    const std::size_t len = mask.size();
    std::normal_distribution<double> normal;
    std::vector<double> x(n), eps(n), z(n, 0.0);
    for (auto& v : x) v = normal(rng);
    for (int t = sched.steps(); t >= 1; --t) {
        for (auto& v : eps) v = normal(rng);
        const double ab = sched.alpha_bar(literal_noise_index ? t : t - 1);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        const std::vector<double> eps_hat = eps_fn(x, t);
        if (eps_hat.size() != n) throw PreconditionError("noise predictor returned the wrong length");
        if (t > 1)
            for (auto& v : z) v = normal(rng);
        else
            std::fill(z.begin(), z.end(), 0.0);
        x = reverse_step(x, t, eps_hat, z, sched);
        for (std::size_t i = 0; i < n; ++i)
            if (mask[i % len]) x[i] = a * y0[i] + b * eps[i];
        for (double v : x)
            if (!std::isfinite(v)) throw NumericError("non-finite sampler state at step " + std::to_string(t));
        if (observer) observer({t, ab, eps, x});
    }
    return x;
}

inline EpsFn model_eps(const NoiseModel& model, const ConditionTokens* conditions) {
    if (model.config().conditional && !conditions)
        throw PreconditionError("conditional model sampled without conditions");
    if (!model.config().conditional && conditions)
        throw PreconditionError("unconditional model given conditions");
    std::optional<Matrix<float>> cond;
    if (conditions) cond = condition_matrix<float>(*conditions);
    const int rows = model.config().in_channels;
    return [&model, cond = std::move(cond), rows](std::span<const double> xt, int t) {
        const auto x = to_tensor<float>(xt, static_cast<std::size_t>(rows));
        return to_flat(model.forward(x, t, cond ? &*cond : nullptr));
    };
}

inline void check_schedule(const NoiseModel& model, const NoiseSchedule& sched) {
    if (!(model.schedule() == sched.fingerprint())) throw PreconditionError("model/schedule fingerprint mismatch");
}

/// Imputation sampling of one scenario; returns x_0 in normalized arranged space.
inline std::vector<double> sample_one(const NoiseModel& model, const NoiseSchedule& sched, const ArrangedWindow& window,
                                      const ConditionTokens* conditions, std::mt19937_64& rng,
                                      bool literal_noise_index = false, const StepObserver& observer = {}) {
    check_schedule(model, sched);
    if (static_cast<std::size_t>(model.config().window_length) != window.length())
        throw PreconditionError("window length does not match the model");
    return impute(model_eps(model, conditions), sched, window.values, window.mask, rng, literal_noise_index, observer);
}

/// Runs `job(i)` for i in [0, n) on `threads` workers.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& job) {
    std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads) : std::thread::hardware_concurrency();
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

inline std::mt19937_64 scenario_rng(std::uint64_t seed, std::size_t index) {
    return std::mt19937_64(seed ^ static_cast<std::uint64_t>(index));
}

/// M conditional then K unconditional scenarios of the forecast day, in MW.
inline ScenarioSet generate_set(const NoiseModel& cond_model, const NoiseModel& uncond_model,
                                const NoiseSchedule& sched, const ArrangedWindow& window, const SamplerConfig& cfg,
                                const NormStats& stats, const std::string& channel = "net_load") {
    check_schedule(cond_model, sched);
    check_schedule(uncond_model, sched);
    if (!cond_model.config().conditional || uncond_model.config().conditional)
        throw PreconditionError("generate_set needs one conditional and one unconditional model");
    if (cond_model.config().window_length != uncond_model.config().window_length)
        throw PreconditionError("conditional and unconditional models differ in window length");
    const int k = unconditional_count(cfg.N, cfg.p_uncond);
    const int m = cfg.N - k;
    const std::size_t s = window.points_per_day, off = window.forecast_offset();
    const auto& cs = stats.at(channel);

    ScenarioSet set;
    set.scenarios = Matrix<double>(static_cast<std::size_t>(cfg.N), s);
    set.provenance.resize(static_cast<std::size_t>(cfg.N));
    set.window_ref = window;
    parallel_for(static_cast<std::size_t>(cfg.N), cfg.threads, [&](std::size_t i) {
        const bool conditional = static_cast<int>(i) < m;
        auto rng = scenario_rng(cfg.seed, i);
        const auto x0 = conditional ? sample_one(cond_model, sched, window, &window.conditions, rng,
                                                 cfg.literal_noise_index)
                                    : sample_one(uncond_model, sched, window, nullptr, rng, cfg.literal_noise_index);
        for (std::size_t j = 0; j < s; ++j) set.scenarios(i, j) = cs.denormalize(x0[off + j]);
        set.provenance[i] = conditional ? Provenance::conditional : Provenance::unconditional;
    });
    return set;
}

/// Shortest round-trip decimal form.
inline std::string format_number(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string scenario_csv(const ScenarioSet& set) {
    std::string out = "scenario_id,provenance";
    for (std::size_t j = 0; j < set.horizon(); ++j) out += ",t" + std::to_string(j);
    out += '\n';
    for (std::size_t i = 0; i < set.count(); ++i) {
        out += std::to_string(i);
        out += ',';
        out += to_string(set.provenance[i]);
        for (std::size_t j = 0; j < set.horizon(); ++j) {
            out += ',';
            out += format_number(set.scenarios(i, j));
        }
        out += '\n';
    }
    return out;
}

} // namespace ecdm
