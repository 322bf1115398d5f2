#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "ecdm/diffusion.hpp"

namespace oracle {

/// Optimal noise predictor for data x0 ~ N(mu, var0): sqrt(1-ab)(x - sqrt(ab) mu) / (ab var0 + 1 - ab).
inline double gaussian_eps(double x, int t, const ecdm::NoiseSchedule& s, double mu, double var0) {
    const double ab = s.alpha_bar(t);
    return std::sqrt(1.0 - ab) * (x - std::sqrt(ab) * mu) / (ab * var0 + 1.0 - ab);
}

/// Same quantity from the score of the Gaussian marginal, by central differences of its log-density.
inline double gaussian_eps_fd(double x, int t, const ecdm::NoiseSchedule& s, double mu, double var0) {
    const double ab = s.alpha_bar(t);
    const double m = std::sqrt(ab) * mu, v = ab * var0 + 1.0 - ab;
    auto logp = [&](double y) { return -0.5 * (y - m) * (y - m) / v - 0.5 * std::log(2.0 * M_PI * v); };
    const double h = 1e-5;
    const double score = (logp(x + h) - logp(x - h)) / (2.0 * h);
    return -std::sqrt(1.0 - ab) * score;
}

struct Moments {
    double mean = 0.0, var = 0.0;
};

inline Moments moments(std::span<const double> xs) {
    Moments m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(xs.size() - 1);
    return m;
}

/// Exact moments of the discrete ancestral chain under the oracle predictor, started from N(0, 1).
/// Each step is affine in x plus independent Gaussian noise, so mean and variance propagate in closed form.
inline Moments gaussian_chain_moments(const ecdm::NoiseSchedule& s, double mu, double var0) {
    Moments m{0.0, 1.0};
    for (int t = s.steps(); t >= 1; --t) {
        const double ab = s.alpha_bar(t), a = s.alpha(t);
        const double c = std::sqrt(1.0 - ab) / (ab * var0 + 1.0 - ab);
        const double k = (1.0 - a) / std::sqrt(1.0 - ab);
        const double g = (1.0 - k * c) / std::sqrt(a);
        const double h = k * c * std::sqrt(ab) * mu / std::sqrt(a);
        const double sigma = s.posterior_sigma(t);
        m.mean = g * m.mean + h;
        m.var = g * g * m.var + sigma * sigma;
    }
    return m;
}

/// Full ancestral sampling of n independent scalars from N(0, 1) with the oracle predictor.
inline std::vector<double> gaussian_reverse_samples(const ecdm::NoiseSchedule& s, double mu, double var0, std::size_t n,
                                                    std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<double> x(n), eps(n), z(n);
    for (auto& v : x) v = normal(rng);
    for (int t = s.steps(); t >= 1; --t) {
        for (std::size_t i = 0; i < n; ++i) eps[i] = gaussian_eps(x[i], t, s, mu, var0);
        for (auto& v : z) v = t > 1 ? normal(rng) : 0.0;
        x = ecdm::reverse_step(x, t, eps, z, s);
    }
    return x;
}

} // namespace oracle
