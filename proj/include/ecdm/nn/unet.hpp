#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ecdm/diffusion.hpp"
#include "ecdm/error.hpp"
#include "ecdm/nn/attention.hpp"
#include "ecdm/nn/layers.hpp"
#include "ecdm/nn/params.hpp"

namespace ecdm {

struct ModelConfig {
    int depth = 6;
    int heads = 8;
    int base_channels = 32;
    int time_embed_dim = 64;
    bool conditional = true;
    /// Width of a condition token (ignored when unconditional).
    int d_feat = 0;
    /// 1 for net load, 3 for stacked load / RES / net load.
    int in_channels = 1;
    /// Sequence length the model is trained on (before padding).
    int window_length = 672;
    int points_per_day = 96;
    std::uint64_t seed = 0;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Sinusoidal step embedding: pairs [sin(t f_k), cos(t f_k)], f_k geometric from 1 down to 1e-4.
inline std::vector<double> time_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw PreconditionError("time embedding dimension must be even and positive");
    if (t < 1) throw PreconditionError("time embedding needs t >= 1");
    const int half = dim / 2;
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int k = 0; k < half; ++k) {
        const double f = half == 1 ? 1.0 : std::exp(-std::log(1e4) * k / (half - 1));
        out[2 * k] = std::sin(t * f);
        out[2 * k + 1] = std::cos(t * f);
    }
    return out;
}

namespace nn {

/// GN -> SiLU -> conv -> +time -> GN -> SiLU -> conv(zero-init) -> +skip
template <typename T>
struct ResBlock {
    GroupNorm<T> norm1, norm2;
    Conv1d<T> conv1, conv2;
    Linear<T> time_proj;
    std::optional<Conv1d<T>> skip;

    struct Cache {
        Tensor<T> x, a1, s1, a2, s2, skip_in;
        typename GroupNorm<T>::Cache n1, n2;
    };

    ResBlock() = default;
    ResBlock(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t temb)
        : norm1(store, name + ".norm1", in),
          norm2(store, name + ".norm2", out),
          conv1(store, name + ".conv1", in, out, 3),
          conv2(store, name + ".conv2", out, out, 3),
          time_proj(store, name + ".time_proj", temb, out) {
        if (in != out) skip.emplace(store, name + ".skip", in, out, 1);
    }

    void init(ParamStore<T>& store, std::mt19937_64& rng) const {
        norm1.init(store);
        norm2.init(store);
        conv1.init(store, rng);
        conv2.init(store, rng, true);
        time_proj.init(store, rng);
        if (skip) skip->init(store, rng);
    }

    Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, const Matrix<T>& temb, Cache* cache) const {
        Cache local;
        Cache& c = cache ? *cache : local;
        c.a1 = norm1.forward(store, x, cache ? &c.n1 : nullptr);
        c.s1 = silu(c.a1);
        Tensor<T> h = conv1.forward(store, c.s1);
        const Matrix<T> tp = time_proj.forward(store, temb);
        for (std::size_t ch = 0; ch < h.rows; ++ch) {
            T* r = h.row(ch).data();
            for (std::size_t j = 0; j < h.cols; ++j) r[j] += tp(0, ch);
        }
        c.a2 = norm2.forward(store, h, cache ? &c.n2 : nullptr);
        c.s2 = silu(c.a2);
        Tensor<T> out = conv2.forward(store, c.s2);
        if (skip)
            add_inplace(out, skip->forward(store, x));
        else
            add_inplace(out, x);
        if (cache) c.x = x;
        return out;
    }

    /// Returns d/dx; adds d/d(temb) into `gtemb`.
    Tensor<T> backward(ParamStore<T>& store, const Cache& c, const Tensor<T>& gy, const Matrix<T>& temb,
                       Matrix<T>& gtemb) const {
        Tensor<T> gx = skip ? skip->backward(store, c.x, gy) : gy;
        Tensor<T> g = conv2.backward(store, c.s2, gy);
        g = silu_backward(c.a2, g);
        g = norm2.backward(store, c.n2, g);
        Matrix<T> gtp(1, g.rows);
        for (std::size_t ch = 0; ch < g.rows; ++ch) gtp(0, ch) = sum(g.row(ch).data(), g.cols);
        const Matrix<T> gt = time_proj.backward(store, temb, gtp);
        axpy(T{1}, gt.data.data(), gtemb.data.data(), gt.size());
        g = conv1.backward(store, c.s1, g);
        g = silu_backward(c.a1, g);
        g = norm1.backward(store, c.n1, g);
        add_inplace(gx, g);
        return gx;
    }
};

/// 1-D UNet noise predictor eps_theta(x_t, t[, C]).
///
/// Level i has base_channels * (i == 0 ? 1 : 2) channels; levels are joined by stride-2
/// convolutions going down and nearest-neighbour upsampling + conv going up. Skips are
/// concatenated. Conditional models carry cross-attention at the two coarsest levels.
template <typename T>
class UNet {
public:
    struct Cache;

    UNet(const ModelConfig& cfg, const ScheduleFingerprint& schedule) : cfg_(cfg), schedule_(schedule) {
        if (cfg.depth < 1) throw PreconditionError("UNet depth must be >= 1");
        if (cfg.base_channels < 1 || cfg.in_channels < 1 || cfg.window_length < 1)
            throw PreconditionError("UNet channel and length settings must be positive");
        if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0)
            throw PreconditionError("time_embed_dim must be even and >= 2");
        if (cfg.conditional && cfg.d_feat < 1) throw PreconditionError("conditional model needs d_feat >= 1");
        build();
        std::mt19937_64 rng(cfg.seed);
        init(rng);
    }

    const ModelConfig& config() const { return cfg_; }
    const ScheduleFingerprint& schedule() const { return schedule_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    std::size_t padded_length() const {
        const std::size_t m = std::size_t{1} << (cfg_.depth - 1);
        const std::size_t len = static_cast<std::size_t>(cfg_.window_length);
        return (len + m - 1) / m * m;
    }

    bool has_attention(int level) const { return cfg_.conditional && level >= cfg_.depth - 2; }

    /// x: [in_channels x window_length]; cond: [n_tokens x d_feat] iff conditional.
    Tensor<T> forward(const Tensor<T>& x, int t, const Matrix<T>* cond, Cache* cache = nullptr) const;

    /// Backpropagates d loss / d output; accumulates parameter gradients; returns d loss / d x.
    Tensor<T> backward(const Cache& cache, const Tensor<T>& gout);

private:
    void build();
    void init(std::mt19937_64& rng);
    std::size_t channels_at(int level) const {
        return static_cast<std::size_t>(cfg_.base_channels) * (level == 0 ? 1u : 2u);
    }
    static std::size_t reflect(long i, std::size_t len) {
        if (len == 1) return 0;
        const long period = 2 * static_cast<long>(len) - 2;
        i %= period;
        if (i < 0) i += period;
        return static_cast<std::size_t>(i < static_cast<long>(len) ? i : period - i);
    }

    ModelConfig cfg_;
    ScheduleFingerprint schedule_;
    ParamStore<T> store_;

    Linear<T> time_mlp_;
    Conv1d<T> in_conv_;
    std::vector<ResBlock<T>> enc_res_, dec_res_;
    std::vector<std::optional<CrossAttentionBlock<T>>> enc_attn_, dec_attn_;
    std::vector<Conv1d<T>> down_, up_;
    ResBlock<T> mid_;
    GroupNorm<T> out_norm_;
    Conv1d<T> out_conv_;
    std::vector<Matrix<T>> positions_;
};

template <typename T>
struct UNet<T>::Cache {
    Matrix<T> temb_raw, temb_pre, temb;
    Tensor<T> x_padded, h_in;
    std::vector<typename ResBlock<T>::Cache> enc, dec;
    std::vector<typename CrossAttentionBlock<T>::Cache> enc_att, dec_att;
    std::vector<Tensor<T>> down_in, up_in;
    typename ResBlock<T>::Cache mid;
    Tensor<T> out_pre, out_act;
    typename GroupNorm<T>::Cache out_norm;
    std::vector<std::size_t> skip_channels;
    std::size_t length = 0;
};

template <typename T>
void UNet<T>::build() {
    const int depth = cfg_.depth;
    const std::size_t temb = static_cast<std::size_t>(cfg_.time_embed_dim);
    const std::size_t heads = static_cast<std::size_t>(cfg_.heads);
    const std::size_t d_feat = static_cast<std::size_t>(cfg_.d_feat);
    time_mlp_ = Linear<T>(store_, "time_mlp", temb, temb);
    in_conv_ = Conv1d<T>(store_, "in_conv", static_cast<std::size_t>(cfg_.in_channels), channels_at(0), 3);
    enc_attn_.resize(depth);
    dec_attn_.resize(depth);
    dec_res_.resize(depth);
    std::size_t ch = channels_at(0);
    for (int i = 0; i < depth; ++i) {
        const std::string n = "enc" + std::to_string(i);
        enc_res_.emplace_back(store_, n + ".res", ch, channels_at(i), temb);
        ch = channels_at(i);
        if (has_attention(i)) enc_attn_[i].emplace(store_, n + ".attn", ch, d_feat, heads);
        if (i + 1 < depth) down_.emplace_back(store_, n + ".down", ch, ch, 3, 2);
    }
    mid_ = ResBlock<T>(store_, "mid", ch, ch, temb);
    up_.resize(depth);
    for (int i = depth - 1; i >= 0; --i) {
        const std::string n = "dec" + std::to_string(i);
        dec_res_[i] = ResBlock<T>(store_, n + ".res", ch + channels_at(i), channels_at(i), temb);
        ch = channels_at(i);
        if (has_attention(i)) dec_attn_[i].emplace(store_, n + ".attn", ch, d_feat, heads);
        if (i > 0) {
            up_[i] = Conv1d<T>(store_, n + ".up", ch, channels_at(i - 1), 3);
            ch = channels_at(i - 1);
        }
    }
    out_norm_ = GroupNorm<T>(store_, "out_norm", ch);
    out_conv_ = Conv1d<T>(store_, "out_conv", ch, static_cast<std::size_t>(cfg_.in_channels), 3);
    const std::size_t len = padded_length();
    for (int i = 0; i < depth; ++i)
        positions_.push_back(weekly_positions<T>(len >> i, std::size_t{1} << i,
                                                 static_cast<std::size_t>(cfg_.points_per_day)));
}

template <typename T>
void UNet<T>::init(std::mt19937_64& rng) {
    time_mlp_.init(store_, rng);
    in_conv_.init(store_, rng);
    for (int i = 0; i < cfg_.depth; ++i) {
        enc_res_[i].init(store_, rng);
        if (enc_attn_[i]) enc_attn_[i]->init(store_, rng);
        if (i + 1 < cfg_.depth) down_[i].init(store_, rng);
    }
    mid_.init(store_, rng);
    for (int i = cfg_.depth - 1; i >= 0; --i) {
        dec_res_[i].init(store_, rng);
        if (dec_attn_[i]) dec_attn_[i]->init(store_, rng);
        if (i > 0) up_[i].init(store_, rng);
    }
    out_norm_.init(store_);
    out_conv_.init(store_, rng);
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x, int t, const Matrix<T>* cond, Cache* cache) const {
    if (x.rows != static_cast<std::size_t>(cfg_.in_channels) || x.cols != static_cast<std::size_t>(cfg_.window_length))
        throw PreconditionError("noise predictor input is " + std::to_string(x.rows) + "x" + std::to_string(x.cols) +
                                ", model expects " + std::to_string(cfg_.in_channels) + "x" +
                                std::to_string(cfg_.window_length));
    if (cfg_.conditional && !cond) throw PreconditionError("conditional model requires condition tokens");
    if (!cfg_.conditional && cond) throw PreconditionError("unconditional model does not accept condition tokens");
    if (cond && cond->cols != static_cast<std::size_t>(cfg_.d_feat))
        throw PreconditionError("condition token width " + std::to_string(cond->cols) + " != model d_feat " +
                                std::to_string(cfg_.d_feat));
    if (t < 1 || t > schedule_.steps) throw PreconditionError("diffusion step outside the model's schedule");

    Cache local;
    Cache& c = cache ? *cache : local;
    const bool keep = cache != nullptr;
    const int depth = cfg_.depth;
    const std::size_t len = x.cols, plen = padded_length();

    Tensor<T> xp(x.rows, plen);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < plen; ++j) xp(r, j) = x(r, reflect(static_cast<long>(j), len));

    const auto embed = time_embedding(t, cfg_.time_embed_dim);
    Matrix<T> temb_raw(1, embed.size());
    for (std::size_t i = 0; i < embed.size(); ++i) temb_raw(0, i) = static_cast<T>(embed[i]);
    Matrix<T> temb_pre = time_mlp_.forward(store_, temb_raw);
    Matrix<T> temb = silu(temb_pre);

    if (keep) {
        c.enc.assign(depth, {});
        c.dec.assign(depth, {});
        c.enc_att.assign(depth, {});
        c.dec_att.assign(depth, {});
        c.down_in.assign(depth, {});
        c.up_in.assign(depth, {});
        c.skip_channels.assign(depth, 0);
    }

    Tensor<T> h = in_conv_.forward(store_, xp);
    std::vector<Tensor<T>> skips(depth);
    for (int i = 0; i < depth; ++i) {
        h = enc_res_[i].forward(store_, h, temb, keep ? &c.enc[i] : nullptr);
        if (enc_attn_[i]) h = enc_attn_[i]->forward(store_, h, *cond, positions_[i], keep ? &c.enc_att[i] : nullptr);
        skips[i] = h;
        if (i + 1 < depth) {
            if (keep) c.down_in[i] = h;
            h = down_[i].forward(store_, h);
        }
    }
    h = mid_.forward(store_, h, temb, keep ? &c.mid : nullptr);
    for (int i = depth - 1; i >= 0; --i) {
        if (keep) c.skip_channels[i] = h.rows;
        h = dec_res_[i].forward(store_, concat_channels(h, skips[i]), temb, keep ? &c.dec[i] : nullptr);
        if (dec_attn_[i]) h = dec_attn_[i]->forward(store_, h, *cond, positions_[i], keep ? &c.dec_att[i] : nullptr);
        if (i > 0) {
            Tensor<T> u = upsample2(h);
            h = up_[i].forward(store_, u);
            if (keep) c.up_in[i] = std::move(u);
        }
    }
    Tensor<T> pre = out_norm_.forward(store_, h, keep ? &c.out_norm : nullptr);
    Tensor<T> act = silu(pre);
    Tensor<T> yp = out_conv_.forward(store_, act);

    Tensor<T> y(x.rows, len);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < len; ++j) y(r, j) = yp(r, j);

    if (keep) {
        c.temb_raw = std::move(temb_raw);
        c.temb_pre = std::move(temb_pre);
        c.temb = std::move(temb);
        c.x_padded = std::move(xp);
        c.out_pre = std::move(pre);
        c.out_act = std::move(act);
        c.length = len;
    }
    return y;
}

template <typename T>
Tensor<T> UNet<T>::backward(const Cache& c, const Tensor<T>& gout) {
    const int depth = cfg_.depth;
    const std::size_t len = c.length, plen = padded_length();
    Tensor<T> gyp(gout.rows, plen);
    for (std::size_t r = 0; r < gout.rows; ++r)
        for (std::size_t j = 0; j < len; ++j) gyp(r, j) = gout(r, j);

    Matrix<T> gtemb(1, static_cast<std::size_t>(cfg_.time_embed_dim));
    Tensor<T> g = out_conv_.backward(store_, c.out_act, gyp);
    g = silu_backward(c.out_pre, g);
    g = out_norm_.backward(store_, c.out_norm, g);

    std::vector<Tensor<T>> gskips(depth);
    for (int i = 0; i < depth; ++i) {
        if (i > 0) {
            g = up_[i].backward(store_, c.up_in[i], g);
            g = upsample2_backward(g);
        }
        if (dec_attn_[i]) g = dec_attn_[i]->backward(store_, c.dec_att[i], g);
        g = dec_res_[i].backward(store_, c.dec[i], g, c.temb, gtemb);
        auto [gh, gs] = split_channels(g, c.skip_channels[i]);
        g = std::move(gh);
        gskips[i] = std::move(gs);
    }
    g = mid_.backward(store_, c.mid, g, c.temb, gtemb);
    for (int i = depth - 1; i >= 0; --i) {
        if (i + 1 < depth) g = down_[i].backward(store_, c.down_in[i], g);
        add_inplace(g, gskips[i]);
        if (enc_attn_[i]) g = enc_attn_[i]->backward(store_, c.enc_att[i], g);
        g = enc_res_[i].backward(store_, c.enc[i], g, c.temb, gtemb);
    }
    Tensor<T> gxp = in_conv_.backward(store_, c.x_padded, g);

    const Matrix<T> gpre = silu_backward(c.temb_pre, gtemb);
    time_mlp_.backward(store_, c.temb_raw, gpre);

    Tensor<T> gx(gout.rows, len);
    for (std::size_t r = 0; r < gout.rows; ++r)
        for (std::size_t j = 0; j < plen; ++j) gx(r, reflect(static_cast<long>(j), len)) += gxp(r, j);
    return gx;
}

} // namespace nn
} // namespace ecdm
