#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ecdm/error.hpp"
#include "ecdm/matrix.hpp"

namespace ecdm {

enum class ScheduleKind { linear };

/// Identifies the schedule a model was trained against.
struct ScheduleFingerprint {
    ScheduleKind kind = ScheduleKind::linear;
    int steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;

    friend bool operator==(const ScheduleFingerprint&, const ScheduleFingerprint&) = default;
};

/// beta/alpha are indexed by t = 1..T (slot 0 unused); alpha_bar[0] == 1.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    static NoiseSchedule linear(int steps, double beta_start, double beta_end) {
        if (steps < 1) throw PreconditionError("noise schedule needs T >= 1");
        if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
            throw PreconditionError("noise schedule needs 0 < beta_start <= beta_end < 1");
        NoiseSchedule s;
        s.fingerprint_ = {ScheduleKind::linear, steps, beta_start, beta_end};
        s.beta_.assign(steps + 1, 0.0);
        s.alpha_.assign(steps + 1, 1.0);
        s.alpha_bar_.assign(steps + 1, 1.0);
        for (int t = 1; t <= steps; ++t) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
            s.beta_[t] = beta_start + (beta_end - beta_start) * frac;
            s.alpha_[t] = 1.0 - s.beta_[t];
            s.alpha_bar_[t] = s.alpha_bar_[t - 1] * s.alpha_[t];
        }
        return s;
    }

    int steps() const { return fingerprint_.steps; }
    /// Throws unless 1 <= t <= T; returns t.
    int require_step(int t) const {
        if (t < 1 || t > steps())
            throw PreconditionError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
        return t;
    }
    double beta(int t) const { return beta_[check(t)]; }
    double alpha(int t) const { return alpha_[check(t)]; }
    double alpha_bar(int t) const {
        if (t < 0 || t > steps()) throw PreconditionError("alpha_bar index out of range");
        return alpha_bar_[t];
    }
    /// Std of the reverse-step noise term; exactly 0 at t = 1.
    double posterior_sigma(int t) const {
        check(t);
        return std::sqrt((1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]) * beta_[t]);
    }
    const ScheduleFingerprint& fingerprint() const { return fingerprint_; }

private:
    int check(int t) const { return require_step(t); }

    ScheduleFingerprint fingerprint_;
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline std::vector<double> forward_sample(std::span<const double> x0, int t, std::span<const double> eps,
                                          const NoiseSchedule& sched) {
    require_same_size(x0.size(), eps.size(), "forward_sample");
    const double ab = sched.alpha_bar(sched.require_step(t));
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

/// One ancestral step x_t -> x_{t-1}. `z` must be all-zero at t = 1.
inline std::vector<double> reverse_step(std::span<const double> xt, int t, std::span<const double> eps_hat,
                                        std::span<const double> z, const NoiseSchedule& sched) {
    require_same_size(xt.size(), eps_hat.size(), "reverse_step");
    require_same_size(xt.size(), z.size(), "reverse_step");
    const double alpha = sched.alpha(t);
    const double ab = sched.alpha_bar(t);
    const double sigma = sched.posterior_sigma(t);
    if (t == 1)
        for (double v : z)
            if (v != 0.0) throw PreconditionError("reverse_step: z must be zero at t = 1");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double eps_coef = (1.0 - alpha) / std::sqrt(1.0 - ab);
    std::vector<double> out(xt.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv_sqrt_alpha * (xt[i] - eps_coef * eps_hat[i]) + sigma * z[i];
    return out;
}

/// s = -eps / sqrt(1 - abar_t)
inline std::vector<double> epsilon_to_score(std::span<const double> eps_hat, int t, const NoiseSchedule& sched) {
    const double scale = -1.0 / std::sqrt(1.0 - sched.alpha_bar(sched.require_step(t)));
    std::vector<double> out(eps_hat.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * eps_hat[i];
    return out;
}

/// x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
inline std::vector<double> predict_x0(std::span<const double> xt, int t, std::span<const double> eps_hat,
                                      const NoiseSchedule& sched) {
    require_same_size(xt.size(), eps_hat.size(), "predict_x0");
    const double ab = sched.alpha_bar(sched.require_step(t));
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> out(xt.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (xt[i] - b * eps_hat[i]) / a;
    return out;
}

/// (1 - omega) eps_uncond + omega eps_cond
inline std::vector<double> cfg_combine(std::span<const double> eps_cond, std::span<const double> eps_uncond,
                                       double omega) {
    require_same_size(eps_cond.size(), eps_uncond.size(), "cfg_combine");
    std::vector<double> out(eps_cond.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - omega) * eps_uncond[i] + omega * eps_cond[i];
    return out;
}

/// Mean squared error.
inline double training_loss(std::span<const double> eps_true, std::span<const double> eps_pred) {
    require_same_size(eps_true.size(), eps_pred.size(), "training_loss");
    if (eps_true.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < eps_true.size(); ++i) {
        const double d = eps_pred[i] - eps_true[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps_true.size());
}

} // namespace ecdm
