#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "ecdm/arrange.hpp"
#include "ecdm/diffusion.hpp"
#include "ecdm/nn/adam.hpp"
#include "ecdm/predictor.hpp"

namespace ecdm {

struct TrainConfig {
    double learning_rate = 5e-4;
    int batch_size = 64;
    int epochs = 500;
    std::uint64_t seed = 0;
};

/// One training sequence: [channels x length] values, plus tokens for conditional models.
struct TrainExample {
    Matrix<double> values;
    std::optional<ConditionTokens> conditions;
};

struct TrainResult {
    NoiseModel model;
    /// Mean per-sample loss of each epoch.
    std::vector<double> loss_trace;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// MSE between eps and eps_theta(x_t, t) for one example; adds the gradient (scaled by
/// `grad_scale`) into the model's parameter gradients.
template <typename T>
double accumulate_loss_gradient(nn::UNet<T>& model, const nn::Tensor<T>& x0, const Matrix<T>* cond, int t,
                                const nn::Tensor<T>& eps, const NoiseSchedule& sched, double grad_scale) {
    const double ab = sched.alpha_bar(t);
    const T a = static_cast<T>(std::sqrt(ab)), b = static_cast<T>(std::sqrt(1.0 - ab));
    nn::Tensor<T> xt(x0.rows, x0.cols);
    for (std::size_t i = 0; i < xt.size(); ++i) xt.data[i] = a * x0.data[i] + b * eps.data[i];
    typename nn::UNet<T>::Cache cache;
    const nn::Tensor<T> pred = model.forward(xt, t, cond, &cache);
    double loss = 0.0;
    nn::Tensor<T> g(pred.rows, pred.cols);
    const double n = static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(eps.data[i]);
        loss += d * d;
        g.data[i] = static_cast<T>(2.0 * d / n * grad_scale);
    }
    model.backward(cache, g);
    return loss / n;
}

/// Fits eps_theta by Adam on the noise-prediction MSE with t ~ U{1..T}.
inline TrainResult train(const std::vector<TrainExample>& dataset, const NoiseSchedule& sched, ModelConfig mcfg,
                         const TrainConfig& tcfg, const EpochCallback& on_epoch = {}) {
    if (dataset.empty()) throw PreconditionError("training dataset is empty");
    if (tcfg.learning_rate <= 0 || tcfg.batch_size <= 0 || tcfg.epochs <= 0)
        throw ConfigError("training settings must all be positive");
    const std::size_t rows = dataset.front().values.rows, len = dataset.front().values.cols;
    for (const auto& ex : dataset) {
        if (ex.values.rows != rows || ex.values.cols != len)
            throw PreconditionError("training windows differ in shape");
        if (mcfg.conditional && !ex.conditions) throw PreconditionError("conditional training needs condition tokens");
    }
    mcfg.in_channels = static_cast<int>(rows);
    mcfg.window_length = static_cast<int>(len);
    if (mcfg.conditional) mcfg.d_feat = static_cast<int>(dataset.front().conditions->width());

    TrainResult result{NoiseModel(mcfg, sched.fingerprint()), {}};
    NoiseModel& model = result.model;
    nn::Adam<float> opt(tcfg.learning_rate);

    std::vector<nn::Tensor<float>> xs;
    std::vector<Matrix<float>> cs;
    for (const auto& ex : dataset) {
        xs.push_back(ex.values.cast<float>());
        if (mcfg.conditional) cs.push_back(condition_matrix<float>(*ex.conditions));
    }

    std::mt19937_64 rng(tcfg.seed);
    std::uniform_int_distribution<int> step_dist(1, sched.steps());
    std::normal_distribution<double> normal;
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    nn::Tensor<float> eps(rows, len);

    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
            model.params().zero_grad();
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t idx = order[k];
                const int t = step_dist(rng);
                for (auto& e : eps.data) e = static_cast<float>(normal(rng));
                epoch_loss += accumulate_loss_gradient(model, xs[idx], mcfg.conditional ? &cs[idx] : nullptr, t, eps,
                                                       sched, 1.0 / static_cast<double>(stop - start));
            }
            opt.step(model.params());
        }
        const double mean = epoch_loss / static_cast<double>(dataset.size());
        if (!std::isfinite(mean)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
        result.loss_trace.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    return result;
}

inline std::vector<TrainExample> to_examples(const std::vector<ArrangedWindow>& windows, bool with_conditions) {
    std::vector<TrainExample> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        TrainExample ex;
        ex.values = Matrix<double>(1, w.values.size());
        ex.values.data = w.values;
        if (with_conditions) ex.conditions = w.conditions;
        out.push_back(std::move(ex));
    }
    return out;
}

inline TrainResult train(const std::vector<ArrangedWindow>& windows, const NoiseSchedule& sched,
                         const ModelConfig& mcfg, const TrainConfig& tcfg, const EpochCallback& on_epoch = {}) {
    return train(to_examples(windows, mcfg.conditional), sched, mcfg, tcfg, on_epoch);
}

} // namespace ecdm
