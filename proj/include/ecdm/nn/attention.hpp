#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "ecdm/matrix.hpp"
#include "ecdm/nn/layers.hpp"

namespace ecdm::nn {

/// Multi-head scaled dot-product attention. Q: [n_q x d], K, V: [n_k x d].
/// Head h uses columns [h*d/heads, (h+1)*d/heads); scores are scaled by 1/sqrt(d/heads).
/// `weights` (optional) receives one [n_q x n_k] matrix per head.
template <typename T>
Matrix<T> attend(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, std::size_t heads,
                 std::vector<Matrix<T>>* weights = nullptr) {
    if (q.cols != k.cols || k.rows != v.rows || v.cols != q.cols)
        throw PreconditionError("attention: dimension mismatch");
    if (heads == 0 || q.cols % heads != 0) throw PreconditionError("attention: heads must divide the model width");
    const std::size_t dh = q.cols / heads, nq = q.rows, nk = k.rows;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const Matrix<T> kt = transpose(k);
    const Matrix<T> vt = transpose(v);
    Matrix<T> out(nq, q.cols);
    if (weights) weights->assign(heads, Matrix<T>(nq, nk));
    std::vector<T> s(nk);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t i = 0; i < nq; ++i) {
            std::fill(s.begin(), s.end(), T{});
            for (std::size_t d = 0; d < dh; ++d) axpy(scale * q(i, c0 + d), kt.row(c0 + d).data(), s.data(), nk);
            const T mx = *std::max_element(s.begin(), s.end());
            for (std::size_t j = 0; j < nk; ++j) s[j] -= mx;
            exp_inplace(s.data(), nk);
            const T inv = T{1} / sum(s.data(), nk);
            for (std::size_t j = 0; j < nk; ++j) s[j] *= inv;
            for (std::size_t d = 0; d < dh; ++d) out(i, c0 + d) = dot(s.data(), vt.row(c0 + d).data(), nk);
            if (weights) std::copy(s.begin(), s.end(), (*weights)[h].row(i).begin());
        }
    }
    return out;
}

/// Gradients of `attend` given the cached per-head weights.
template <typename T>
void attend_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, std::size_t heads,
                     const std::vector<Matrix<T>>& weights, const Matrix<T>& gout, Matrix<T>& gq, Matrix<T>& gk,
                     Matrix<T>& gv) {
    const std::size_t dh = q.cols / heads, nq = q.rows, nk = k.rows;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const Matrix<T> kt = transpose(k);
    const Matrix<T> vt = transpose(v);
    Matrix<T> gkt(k.cols, nk), gvt(v.cols, nk);
    gq = Matrix<T>(nq, q.cols);
    std::vector<T> ga(nk), gs(nk);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        const Matrix<T>& a = weights[h];
        for (std::size_t i = 0; i < nq; ++i) {
            const T* ai = a.row(i).data();
            std::fill(ga.begin(), ga.end(), T{});
            for (std::size_t d = 0; d < dh; ++d) {
                const T g = gout(i, c0 + d);
                axpy(g, vt.row(c0 + d).data(), ga.data(), nk);
                axpy(g, ai, gvt.row(c0 + d).data(), nk);
            }
            const T rowdot = dot(ga.data(), ai, nk);
            for (std::size_t j = 0; j < nk; ++j) gs[j] = ai[j] * (ga[j] - rowdot) * scale;
            for (std::size_t d = 0; d < dh; ++d) {
                gq(i, c0 + d) = dot(gs.data(), kt.row(c0 + d).data(), nk);
                axpy(q(i, c0 + d), gs.data(), gkt.row(c0 + d).data(), nk);
            }
        }
    }
    gk = transpose(gkt);
    gv = transpose(gvt);
}

/// CrossAttention(X1, X2) = Softmax(Q K^T / sqrt(d_2)) V with Q = X1 W^Q, K = X2 W^K, V = X2 W^V.
/// Projection matrices follow the row-vector convention ([d_in x d_out]).
template <typename T>
Matrix<T> cross_attention(const Matrix<T>& x1, const Matrix<T>& x2, const Matrix<T>& wq, const Matrix<T>& wk,
                          const Matrix<T>& wv, std::size_t heads = 1, std::vector<Matrix<T>>* weights = nullptr) {
    auto matmul = [](const Matrix<T>& a, const Matrix<T>& b) {
        if (a.cols != b.rows) throw PreconditionError("cross_attention: projection shape mismatch");
        Matrix<T> c(a.rows, b.cols);
        for (std::size_t i = 0; i < a.rows; ++i)
            for (std::size_t p = 0; p < a.cols; ++p) axpy(a(i, p), &b(p, 0), &c(i, 0), b.cols);
        return c;
    };
    return attend(matmul(x1, wq), matmul(x2, wk), matmul(x2, wv), heads, weights);
}

inline constexpr std::size_t kPositionFeatures = 4;

/// sin/cos of time-of-day and day-of-week for each position of a weekly-arranged
/// (Monday-first) sequence sampled every `stride` original points.
template <typename T>
Matrix<T> weekly_positions(std::size_t length, std::size_t stride, std::size_t points_per_day) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    Matrix<T> p(length, kPositionFeatures);
    for (std::size_t j = 0; j < length; ++j) {
        const std::size_t i = j * stride;
        const double hour = static_cast<double>(i % points_per_day) / static_cast<double>(points_per_day);
        const double day = static_cast<double>((i / points_per_day) % 7) / 7.0;
        p(j, 0) = static_cast<T>(std::sin(two_pi * hour));
        p(j, 1) = static_cast<T>(std::cos(two_pi * hour));
        p(j, 2) = static_cast<T>(std::sin(two_pi * day));
        p(j, 3) = static_cast<T>(std::cos(two_pi * day));
    }
    return p;
}

/// Residual cross-attention block: x + Proj(CrossAttention([GN(x)^T | pos], cond)).
template <typename T>
struct CrossAttentionBlock {
    GroupNorm<T> norm;
    Linear<T> to_q, to_k, to_v, to_out;
    std::size_t channels = 0, heads = 1;

    struct Cache {
        typename GroupNorm<T>::Cache norm;
        Matrix<T> xq, cond, q, k, v, o;
        std::vector<Matrix<T>> weights;
    };

    CrossAttentionBlock() = default;
    CrossAttentionBlock(ParamStore<T>& store, const std::string& name, std::size_t ch, std::size_t cond_dim,
                        std::size_t n_heads)
        : norm(store, name + ".norm", ch),
          to_q(store, name + ".to_q", ch + kPositionFeatures, ch),
          to_k(store, name + ".to_k", cond_dim, ch),
          to_v(store, name + ".to_v", cond_dim, ch),
          to_out(store, name + ".to_out", ch, ch),
          channels(ch),
          heads(n_heads) {
        if (n_heads == 0 || ch % n_heads != 0)
            throw PreconditionError("attention heads (" + std::to_string(n_heads) + ") must divide width " +
                                    std::to_string(ch));
    }

    void init(ParamStore<T>& store, std::mt19937_64& rng) const {
        norm.init(store);
        to_q.init(store, rng);
        to_k.init(store, rng);
        to_v.init(store, rng);
        to_out.init(store, rng, true);
    }

    Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, const Matrix<T>& cond, const Matrix<T>& pos,
                      Cache* cache) const {
        typename GroupNorm<T>::Cache nc;
        const Tensor<T> h = norm.forward(store, x, cache ? &nc : nullptr);
        const std::size_t len = x.cols;
        Matrix<T> xq(len, channels + kPositionFeatures);
        for (std::size_t j = 0; j < len; ++j) {
            for (std::size_t c = 0; c < channels; ++c) xq(j, c) = h(c, j);
            for (std::size_t p = 0; p < kPositionFeatures; ++p) xq(j, channels + p) = pos(j, p);
        }
        Matrix<T> q = to_q.forward(store, xq);
        Matrix<T> k = to_k.forward(store, cond);
        Matrix<T> v = to_v.forward(store, cond);
        std::vector<Matrix<T>> weights;
        Matrix<T> o = attend(q, k, v, heads, cache ? &weights : nullptr);
        const Matrix<T> y = to_out.forward(store, o);
        Tensor<T> out = x;
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t j = 0; j < len; ++j) out(c, j) += y(j, c);
        if (cache) {
            cache->norm = std::move(nc);
            cache->xq = std::move(xq);
            cache->cond = cond;
            cache->q = std::move(q);
            cache->k = std::move(k);
            cache->v = std::move(v);
            cache->o = std::move(o);
            cache->weights = std::move(weights);
        }
        return out;
    }

    Tensor<T> backward(ParamStore<T>& store, const Cache& cache, const Tensor<T>& gout) const {
        const std::size_t len = gout.cols;
        const Matrix<T> gy = transpose(gout);
        const Matrix<T> go = to_out.backward(store, cache.o, gy);
        Matrix<T> gq, gk, gv;
        attend_backward(cache.q, cache.k, cache.v, heads, cache.weights, go, gq, gk, gv);
        to_k.backward(store, cache.cond, gk);
        to_v.backward(store, cache.cond, gv);
        const Matrix<T> gxq = to_q.backward(store, cache.xq, gq);
        Tensor<T> gh(channels, len);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t j = 0; j < len; ++j) gh(c, j) = gxq(j, c);
        Tensor<T> gx = norm.backward(store, cache.norm, gh);
        add_inplace(gx, gout);
        return gx;
    }
};

} // namespace ecdm::nn
