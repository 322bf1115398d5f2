#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "ecdm/error.hpp"

namespace ecdm::nn {

template <typename T>
struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;

    std::size_t size() const { return value.size(); }
};

/// Named parameter tensors. Layers refer to entries by index.
template <typename T>
class ParamStore {
public:
    std::size_t add(std::string name, std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        params_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T{}), std::vector<T>(n, T{})});
        return params_.size() - 1;
    }

    Param<T>& operator[](std::size_t i) { return params_[i]; }
    const Param<T>& operator[](std::size_t i) const { return params_[i]; }

    std::vector<Param<T>>& all() { return params_; }
    const std::vector<Param<T>>& all() const { return params_; }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T{});
    }

    const Param<T>* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

private:
    std::vector<Param<T>> params_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void init_fan_in(Param<T>& p, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_constant(Param<T>& p, T value) {
    std::fill(p.value.begin(), p.value.end(), value);
}

} // namespace ecdm::nn
