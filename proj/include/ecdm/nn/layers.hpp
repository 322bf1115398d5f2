#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ecdm/matrix.hpp"
#include "ecdm/nn/params.hpp"

namespace ecdm::nn {

/// Feature map: rows = channels, cols = time.
template <typename T>
using Tensor = Matrix<T>;

template <typename T>
T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
    T acc{};
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
void axpy(T alpha, const T* __restrict x, T* __restrict y, std::size_t n) {
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T sum(const T* a, std::size_t n) {
    T acc{};
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

/// In-place exp. The float path is a vectorizable Cephes-style polynomial
/// (relative error ~2e-7); other types use std::exp.
template <typename T>
void exp_inplace(T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(x[i]);
}

template <>
inline void exp_inplace<float>(float* x, std::size_t n) {
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) {
        float v = x[i] < -87.0f ? -87.0f : x[i];
        v = v > 88.0f ? 88.0f : v;
        const float t = v * 1.44269504088896341f;
        const std::int32_t ni = static_cast<std::int32_t>(t + (t < 0.0f ? -0.5f : 0.5f));
        const float fn = static_cast<float>(ni);
        const float r = v - fn * 0.693359375f + fn * 2.12194440e-4f;
        float p = 1.9875691500e-4f;
        p = p * r + 1.3981999507e-3f;
        p = p * r + 8.3334519073e-3f;
        p = p * r + 4.1665795894e-2f;
        p = p * r + 1.6666665459e-1f;
        p = p * r + 5.0000001201e-1f;
        p = p * r * r + r + 1.0f;
        x[i] = p * std::bit_cast<float>((ni + 127) << 23);
    }
}

/// 1-D convolution with zero padding of kernel/2 on both sides.
template <typename T>
struct Conv1d {
    std::size_t weight = 0, bias = 0;
    std::size_t in_ch = 0, out_ch = 0, kernel = 3, stride = 1;

    Conv1d() = default;
    Conv1d(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
           std::size_t s = 1)
        : in_ch(in), out_ch(out), kernel(k), stride(s) {
        weight = store.add(name + ".weight", {out, in, k});
        bias = store.add(name + ".bias", {out});
    }

    void init(ParamStore<T>& store, std::mt19937_64& rng, bool zero = false) const {
        if (zero) {
            init_constant(store[weight], T{});
            init_constant(store[bias], T{});
            return;
        }
        init_fan_in(store[weight], in_ch * kernel, rng);
        init_fan_in(store[bias], in_ch * kernel, rng);
    }

    std::size_t out_length(std::size_t len) const { return (len + 2 * (kernel / 2) - kernel) / stride + 1; }

    Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x) const {
        const std::size_t len = x.cols, lout = out_length(len);
        const long pad = static_cast<long>(kernel / 2);
        const T* w = store[weight].value.data();
        const T* b = store[bias].value.data();
        Tensor<T> y(out_ch, lout);
        for (std::size_t co = 0; co < out_ch; ++co) {
            T* yr = y.row(co).data();
            std::fill(yr, yr + lout, b[co]);
            for (std::size_t ci = 0; ci < in_ch; ++ci) {
                const T* xr = x.row(ci).data();
                for (std::size_t k = 0; k < kernel; ++k) {
                    const T wk = w[(co * in_ch + ci) * kernel + k];
                    const long off = static_cast<long>(k) - pad;
                    if (stride == 1) {
                        const std::size_t j0 = off < 0 ? static_cast<std::size_t>(-off) : 0;
                        const std::size_t j1 = std::min<long>(static_cast<long>(lout), static_cast<long>(len) - off);
                        if (j1 > j0) axpy(wk, xr + j0 + off, yr + j0, j1 - j0);
                    } else {
                        for (std::size_t j = 0; j < lout; ++j) {
                            const long src = static_cast<long>(j * stride) + off;
                            if (src >= 0 && src < static_cast<long>(len)) yr[j] += wk * xr[src];
                        }
                    }
                }
            }
        }
        return y;
    }

    /// Accumulates parameter gradients; returns d loss / d x.
    Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& gy) const {
        const std::size_t len = x.cols, lout = gy.cols;
        const long pad = static_cast<long>(kernel / 2);
        const T* w = store[weight].value.data();
        T* gw = store[weight].grad.data();
        T* gb = store[bias].grad.data();
        Tensor<T> gx(in_ch, len);
        for (std::size_t co = 0; co < out_ch; ++co) {
            const T* g = gy.row(co).data();
            gb[co] += sum(g, lout);
            for (std::size_t ci = 0; ci < in_ch; ++ci) {
                const T* xr = x.row(ci).data();
                T* gxr = gx.row(ci).data();
                for (std::size_t k = 0; k < kernel; ++k) {
                    const std::size_t wi = (co * in_ch + ci) * kernel + k;
                    const long off = static_cast<long>(k) - pad;
                    if (stride == 1) {
                        const std::size_t j0 = off < 0 ? static_cast<std::size_t>(-off) : 0;
                        const std::size_t j1 = std::min<long>(static_cast<long>(lout), static_cast<long>(len) - off);
                        if (j1 <= j0) continue;
                        gw[wi] += dot(g + j0, xr + j0 + off, j1 - j0);
                        axpy(w[wi], g + j0, gxr + j0 + off, j1 - j0);
                    } else {
                        T acc{};
                        for (std::size_t j = 0; j < lout; ++j) {
                            const long src = static_cast<long>(j * stride) + off;
                            if (src >= 0 && src < static_cast<long>(len)) {
                                acc += g[j] * xr[src];
                                gxr[src] += w[wi] * g[j];
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
        return gx;
    }
};

/// Normalizes over (channels in group) x time, then applies a per-channel affine map.
template <typename T>
struct GroupNorm {
    std::size_t gamma = 0, beta = 0;
    std::size_t channels = 0, groups = 1;
    static constexpr double kEps = 1e-5;

    struct Cache {
        Tensor<T> xhat;
        std::vector<T> inv_std;
    };

    static std::size_t default_groups(std::size_t ch) {
        std::size_t g = 8;
        while (g > 1 && (ch % g != 0 || ch / g < 2)) g /= 2;
        return g;
    }

    GroupNorm() = default;
    GroupNorm(ParamStore<T>& store, const std::string& name, std::size_t ch)
        : channels(ch), groups(default_groups(ch)) {
        gamma = store.add(name + ".gamma", {ch});
        beta = store.add(name + ".beta", {ch});
    }

    void init(ParamStore<T>& store) const {
        init_constant(store[gamma], T{1});
        init_constant(store[beta], T{0});
    }

    Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const {
        const std::size_t len = x.cols, cg = channels / groups;
        const T* ga = store[gamma].value.data();
        const T* be = store[beta].value.data();
        Tensor<T> y(channels, len);
        Tensor<T> xhat(channels, len);
        std::vector<T> inv(groups);
        const double n = static_cast<double>(cg * len);
        for (std::size_t g = 0; g < groups; ++g) {
            const T* base = x.row(g * cg).data();
            double mean = 0.0;
            for (std::size_t i = 0; i < cg * len; ++i) mean += base[i];
            mean /= n;
            double var = 0.0;
            for (std::size_t i = 0; i < cg * len; ++i) var += (base[i] - mean) * (base[i] - mean);
            var /= n;
            inv[g] = static_cast<T>(1.0 / std::sqrt(var + kEps));
            for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
                const T* xr = x.row(c).data();
                T* hr = xhat.row(c).data();
                T* yr = y.row(c).data();
                const T m = static_cast<T>(mean);
                for (std::size_t j = 0; j < len; ++j) {
                    hr[j] = (xr[j] - m) * inv[g];
                    yr[j] = ga[c] * hr[j] + be[c];
                }
            }
        }
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->inv_std = std::move(inv);
        }
        return y;
    }

    Tensor<T> backward(ParamStore<T>& store, const Cache& cache, const Tensor<T>& gy) const {
        const std::size_t len = gy.cols, cg = channels / groups;
        const T* ga = store[gamma].value.data();
        T* gga = store[gamma].grad.data();
        T* gbe = store[beta].grad.data();
        Tensor<T> gx(channels, len);
        const T n = static_cast<T>(cg * len);
        for (std::size_t g = 0; g < groups; ++g) {
            T sum_g{}, sum_gh{};
            for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
                const T* gr = gy.row(c).data();
                const T* hr = cache.xhat.row(c).data();
                const T dg = dot(gr, hr, len);
                const T db = sum(gr, len);
                gga[c] += dg;
                gbe[c] += db;
                sum_g += ga[c] * db;
                sum_gh += ga[c] * dg;
            }
            for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
                const T* gr = gy.row(c).data();
                const T* hr = cache.xhat.row(c).data();
                T* out = gx.row(c).data();
                const T scale = cache.inv_std[g] / n;
                for (std::size_t j = 0; j < len; ++j) out[j] = scale * (n * ga[c] * gr[j] - sum_g - hr[j] * sum_gh);
            }
        }
        return gx;
    }
};

template <typename T>
T sigmoid(T x) {
    return T{1} / (T{1} + std::exp(-x));
}

/// sigmoid(x) for every element.
template <typename T>
std::vector<T> sigmoid_all(const Tensor<T>& x) {
    std::vector<T> s(x.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = -x.data[i];
    exp_inplace(s.data(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = T{1} / (T{1} + s[i]);
    return s;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    const auto s = sigmoid_all(x);
    Tensor<T> y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] * s[i];
    return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    const auto s = sigmoid_all(x);
    Tensor<T> gx(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) gx.data[i] = gy.data[i] * s[i] * (T{1} + x.data[i] * (T{1} - s[i]));
    return gx;
}

/// y = W x + b, W stored [out x in]. Applied row-wise to token matrices.
template <typename T>
struct Linear {
    std::size_t weight = 0, bias = 0;
    std::size_t in = 0, out = 0;

    Linear() = default;
    Linear(ParamStore<T>& store, const std::string& name, std::size_t in_dim, std::size_t out_dim)
        : in(in_dim), out(out_dim) {
        weight = store.add(name + ".weight", {out_dim, in_dim});
        bias = store.add(name + ".bias", {out_dim});
    }

    void init(ParamStore<T>& store, std::mt19937_64& rng, bool zero = false) const {
        if (zero) {
            init_constant(store[weight], T{});
            init_constant(store[bias], T{});
            return;
        }
        init_fan_in(store[weight], in, rng);
        init_fan_in(store[bias], in, rng);
    }

    /// x: [n x in] -> [n x out]
    Matrix<T> forward(const ParamStore<T>& store, const Matrix<T>& x) const {
        const T* w = store[weight].value.data();
        const T* b = store[bias].value.data();
        Matrix<T> y(x.rows, out);
        for (std::size_t r = 0; r < x.rows; ++r) {
            const T* xr = x.row(r).data();
            for (std::size_t o = 0; o < out; ++o) y(r, o) = b[o] + dot(w + o * in, xr, in);
        }
        return y;
    }

    Matrix<T> backward(ParamStore<T>& store, const Matrix<T>& x, const Matrix<T>& gy) const {
        const T* w = store[weight].value.data();
        T* gw = store[weight].grad.data();
        T* gb = store[bias].grad.data();
        Matrix<T> gx(x.rows, in);
        for (std::size_t r = 0; r < x.rows; ++r) {
            const T* xr = x.row(r).data();
            T* gxr = gx.row(r).data();
            for (std::size_t o = 0; o < out; ++o) {
                const T g = gy(r, o);
                gb[o] += g;
                axpy(g, xr, gw + o * in, in);
                axpy(g, w + o * in, gxr, in);
            }
        }
        return gx;
    }
};

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
    Tensor<T> y(x.rows, x.cols * 2);
    for (std::size_t c = 0; c < x.rows; ++c)
        for (std::size_t j = 0; j < x.cols; ++j) y(c, 2 * j) = y(c, 2 * j + 1) = x(c, j);
    return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& gy) {
    Tensor<T> gx(gy.rows, gy.cols / 2);
    for (std::size_t c = 0; c < gx.rows; ++c)
        for (std::size_t j = 0; j < gx.cols; ++j) gx(c, j) = gy(c, 2 * j) + gy(c, 2 * j + 1);
    return gx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> y(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<long>(a.size()));
    return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, std::size_t first) {
    Tensor<T> a(first, g.cols), b(g.rows - first, g.cols);
    std::copy(g.data.begin(), g.data.begin() + static_cast<long>(a.size()), a.data.begin());
    std::copy(g.data.begin() + static_cast<long>(a.size()), g.data.end(), b.data.begin());
    return {std::move(a), std::move(b)};
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    axpy(T{1}, b.data.data(), a.data.data(), a.size());
}

} // namespace ecdm::nn
