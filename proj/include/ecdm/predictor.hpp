#pragma once

#include <span>
#include <vector>

#include "ecdm/arrange.hpp"
#include "ecdm/nn/unet.hpp"

namespace ecdm {

/// Trained noise predictor parameters (float storage, as in checkpoints).
using NoiseModel = nn::UNet<float>;

template <typename T>
nn::Tensor<T> to_tensor(std::span<const double> flat, std::size_t rows) {
    if (rows == 0 || flat.size() % rows != 0) throw PreconditionError("flattened input does not split into channels");
    nn::Tensor<T> x(rows, flat.size() / rows);
    for (std::size_t i = 0; i < flat.size(); ++i) x.data[i] = static_cast<T>(flat[i]);
    return x;
}

template <typename T>
std::vector<double> to_flat(const nn::Tensor<T>& x) {
    return std::vector<double>(x.data.begin(), x.data.end());
}

template <typename T>
Matrix<T> condition_matrix(const ConditionTokens& c) {
    return c.tokens.template cast<T>();
}

/// eps_theta(x_t, t[, C]). `xt` is channel-major when the model has several input channels.
template <typename T>
std::vector<double> predict_noise(const nn::UNet<T>& model, std::span<const double> xt, int t,
                                  const ConditionTokens* conditions) {
    const auto x = to_tensor<T>(xt, static_cast<std::size_t>(model.config().in_channels));
    if (conditions) {
        const auto cond = condition_matrix<T>(*conditions);
        return to_flat(model.forward(x, t, &cond));
    }
    return to_flat(model.forward(x, t, nullptr));
}

} // namespace ecdm
