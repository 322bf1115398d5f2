#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "ecdm/checkpoint.hpp"
#include "ecdm/nn/attention.hpp"
#include "ecdm/predictor.hpp"
#include "ecdm/synth.hpp"
#include "ecdm/trainer.hpp"

using namespace ecdm;

namespace {

Matrix<double> mat(std::size_t r, std::size_t c, std::vector<double> v) {
    Matrix<double> m(r, c);
    m.data = std::move(v);
    return m;
}

Matrix<double> identity(std::size_t n) {
    Matrix<double> m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

ModelConfig tiny(bool conditional, int in_channels = 1, int length = 24) {
    ModelConfig c;
    c.depth = 2;
    c.heads = 2;
    c.base_channels = 4;
    c.time_embed_dim = 8;
    c.conditional = conditional;
    c.d_feat = conditional ? 3 : 0;
    c.in_channels = in_channels;
    c.window_length = length;
    c.points_per_day = 8;
    c.seed = 11;
    return c;
}

const ScheduleFingerprint kFp = NoiseSchedule::linear(50, 1e-4, 0.02).fingerprint();

template <typename T>
void randomize(nn::UNet<T>& m, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& p : m.params().all())
        for (auto& v : p.value) v = static_cast<T>(n(rng));
}

Matrix<double> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Matrix<double> m(r, c);
    for (auto& v : m.data) v = n(rng);
    return m;
}

double weighted_output(const nn::UNet<double>& m, const Matrix<double>& x, int t, const Matrix<double>* cond,
                       const Matrix<double>& w) {
    const auto out = m.forward(x, t, cond);
    return std::inner_product(out.data.begin(), out.data.end(), w.data.begin(), 0.0);
}

bool close_rel(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-4}); }

} // namespace

TEST(CrossAttention, HandSoftmax) {
    const auto x1 = mat(1, 2, {1, 0});
    const auto x2 = mat(2, 2, {1, 0, 0, 1});
    std::vector<Matrix<double>> w;
    const auto out = nn::cross_attention(x1, x2, identity(2), identity(2), identity(2), 1, &w);
    EXPECT_NEAR(w[0](0, 0), 0.6698, 1e-4);
    EXPECT_NEAR(w[0](0, 1), 0.3302, 1e-4);
    EXPECT_NEAR(out(0, 0), w[0](0, 0), 1e-12);
    EXPECT_NEAR(out(0, 1), w[0](0, 1), 1e-12);
}

TEST(CrossAttention, SingleKeyReturnsValueRow) {
    const auto x1 = random_matrix(5, 4, 1);
    const auto x2 = random_matrix(1, 3, 2);
    const auto wq = random_matrix(4, 4, 3), wk = random_matrix(3, 4, 4), wv = random_matrix(3, 4, 5);
    const auto out = nn::cross_attention(x1, x2, wq, wk, wv, 2);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t d = 0; d < 4; ++d) {
            double v = 0.0;
            for (std::size_t p = 0; p < 3; ++p) v += x2(0, p) * wv(p, d);
            EXPECT_NEAR(out(i, d), v, 1e-12);
        }
}

TEST(CrossAttention, WeightsAreDistributions) {
    const auto x1 = random_matrix(6, 4, 7), x2 = random_matrix(9, 4, 8);
    std::vector<Matrix<double>> w;
    nn::cross_attention(x1, x2, identity(4), identity(4), identity(4), 2, &w);
    ASSERT_EQ(w.size(), 2u);
    for (const auto& h : w)
        for (std::size_t i = 0; i < h.rows; ++i) {
            double s = 0.0;
            for (double v : h.row(i)) {
                EXPECT_GE(v, 0.0);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
}

TEST(CrossAttention, DimensionMismatch) {
    const auto x1 = random_matrix(2, 3, 1), x2 = random_matrix(2, 2, 2);
    EXPECT_THROW(nn::cross_attention(x1, x2, identity(2), identity(2), identity(2)), PreconditionError);
    EXPECT_THROW(nn::cross_attention(x2, x2, identity(2), identity(2), identity(2), 3), PreconditionError);
}

TEST(TimeEmbedding, RangeAndDeterminism) {
    const auto a = time_embedding(1, 16), b = time_embedding(2, 16);
    EXPECT_EQ(a, time_embedding(1, 16));
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_LE(std::abs(a[i]), 1.0);
        diff += (a[i] - b[i]) * (a[i] - b[i]);
    }
    EXPECT_GT(diff, 0.0);
    EXPECT_DOUBLE_EQ(a[0], std::sin(1.0));
    EXPECT_NEAR(a[14], std::sin(1e-4), 1e-15);
    EXPECT_THROW(time_embedding(1, 7), PreconditionError);
    EXPECT_THROW(time_embedding(0, 8), PreconditionError);
}

TEST(UNet, ParameterGradientsMatchFiniteDifferences) {
    for (bool conditional : {false, true}) {
        nn::UNet<double> m(tiny(conditional, 3), kFp);
        ASSERT_LE(m.params().count(), 4000u);
        randomize(m, 3, 0.3);
        const auto x = random_matrix(3, 24, 4), w = random_matrix(3, 24, 5), cond = random_matrix(24, 3, 6);
        const Matrix<double>* c = conditional ? &cond : nullptr;
        typename nn::UNet<double>::Cache cache;
        m.params().zero_grad();
        m.forward(x, 17, c, &cache);
        m.backward(cache, w);

        std::mt19937_64 rng(9);
        auto& all = m.params().all();
        int checked = 0;
        while (checked < 10) {
            auto& p = all[std::uniform_int_distribution<std::size_t>(0, all.size() - 1)(rng)];
            const std::size_t k = std::uniform_int_distribution<std::size_t>(0, p.size() - 1)(rng);
            const double orig = p.value[k], h = 1e-4;
            p.value[k] = orig + h;
            const double up = weighted_output(m, x, 17, c, w);
            p.value[k] = orig - h;
            const double down = weighted_output(m, x, 17, c, w);
            p.value[k] = orig;
            const double fd = (up - down) / (2 * h);
            EXPECT_TRUE(close_rel(p.grad[k], fd, 1e-3)) << p.name << "[" << k << "] " << p.grad[k] << " vs " << fd;
            ++checked;
        }
    }
}

TEST(UNet, InputGradientMatchesFiniteDifferences) {
    nn::UNet<double> m(tiny(true, 3), kFp);
    randomize(m, 13, 0.3);
    auto x = random_matrix(3, 24, 14);
    const auto w = random_matrix(3, 24, 15), cond = random_matrix(24, 3, 16);
    typename nn::UNet<double>::Cache cache;
    m.forward(x, 5, &cond, &cache);
    const auto gx = m.backward(cache, w);
    for (std::size_t k : {0u, 7u, 30u, 52u, 71u}) {
        const double orig = x.data[k], h = 1e-4;
        x.data[k] = orig + h;
        const double up = weighted_output(m, x, 5, &cond, w);
        x.data[k] = orig - h;
        const double down = weighted_output(m, x, 5, &cond, w);
        x.data[k] = orig;
        EXPECT_TRUE(close_rel(gx.data[k], (up - down) / (2 * h), 1e-3)) << k;
    }
}

TEST(UNet, UnconditionalHasNoAttention) {
    nn::UNet<float> m(tiny(false), kFp);
    for (const auto& p : m.params().all()) EXPECT_EQ(p.name.find("attn"), std::string::npos) << p.name;
    nn::UNet<float> c(tiny(true), kFp);
    EXPECT_GT(c.params().count(), m.params().count());
}

TEST(UNet, ParameterCountDeterministic) {
    auto cfg = tiny(true);
    nn::UNet<float> a(cfg, kFp);
    cfg.seed = 99;
    nn::UNet<float> b(cfg, kFp);
    EXPECT_EQ(a.params().count(), b.params().count());
}

TEST(PredictNoise, DeterministicShapeAndScale) {
    auto cfg = tiny(false, 1, 672);
    cfg.depth = 3;
    cfg.base_channels = 8;
    cfg.points_per_day = 96;
    const NoiseModel m(cfg, kFp);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    std::vector<double> x(672);
    for (auto& v : x) v = n(rng);
    const auto a = predict_noise(m, x, 25, nullptr), b = predict_noise(m, x, 25, nullptr);
    ASSERT_EQ(a.size(), x.size());
    EXPECT_EQ(a, b);
    double ss = 0.0;
    for (double v : a) {
        EXPECT_TRUE(std::isfinite(v));
        ss += v * v;
    }
    const double rms = std::sqrt(ss / a.size());
    EXPECT_GE(rms, 0.01);
    EXPECT_LE(rms, 10.0);
}

TEST(PredictNoise, ContractErrors) {
    const NoiseModel cond(tiny(true), kFp), uncond(tiny(false), kFp);
    const std::vector<double> x(24, 0.0), bad(20, 0.0);
    ConditionTokens tok{Matrix<double>(24, 3), {"a", "b", "c"}};
    EXPECT_THROW(predict_noise(cond, x, 3, nullptr), PreconditionError);
    EXPECT_THROW(predict_noise(uncond, x, 3, &tok), PreconditionError);
    EXPECT_THROW(predict_noise(uncond, bad, 3, nullptr), PreconditionError);
    EXPECT_THROW(predict_noise(uncond, x, 51, nullptr), PreconditionError);
    ConditionTokens wide{Matrix<double>(24, 4), {"a", "b", "c", "d"}};
    EXPECT_THROW(predict_noise(cond, x, 3, &wide), PreconditionError);
}

TEST(Train, ZeroDatasetLossDecreases) {
    const auto sched = NoiseSchedule::linear(50, 1e-4, 0.02);
    std::vector<TrainExample> data(8, TrainExample{Matrix<double>(1, 32), std::nullopt});
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.batch_size = 4;
    tc.epochs = 50;
    tc.seed = 3;
    auto cfg = tiny(false, 1, 32);
    const auto r = train(data, sched, cfg, tc);
    ASSERT_EQ(r.loss_trace.size(), 50u);
    const double head = (r.loss_trace[0] + r.loss_trace[1] + r.loss_trace[2]) / 3;
    const double tail = (r.loss_trace[47] + r.loss_trace[48] + r.loss_trace[49]) / 3;
    EXPECT_LT(tail, head);
    EXPECT_EQ(r.model.config().window_length, 32);
}

TEST(Train, SameSeedSameTrace) {
    const auto sched = NoiseSchedule::linear(20, 1e-4, 0.2);
    std::vector<TrainExample> data;
    for (int i = 0; i < 6; ++i) data.push_back({random_matrix(1, 32, 40 + i), std::nullopt});
    TrainConfig tc;
    tc.batch_size = 3;
    tc.epochs = 5;
    tc.seed = 8;
    const auto a = train(data, sched, tiny(false, 1, 32), tc);
    const auto b = train(data, sched, tiny(false, 1, 32), tc);
    EXPECT_EQ(a.loss_trace, b.loss_trace);
    tc.seed = 9;
    EXPECT_NE(train(data, sched, tiny(false, 1, 32), tc).loss_trace, a.loss_trace);
}

TEST(Train, Errors) {
    const auto sched = NoiseSchedule::linear(20, 1e-4, 0.2);
    EXPECT_THROW(train(std::vector<TrainExample>{}, sched, tiny(false), TrainConfig{}), PreconditionError);
    std::vector<TrainExample> data{{Matrix<double>(1, 24), std::nullopt}, {Matrix<double>(1, 16), std::nullopt}};
    EXPECT_THROW(train(data, sched, tiny(false), TrainConfig{}), PreconditionError);
    std::vector<TrainExample> bad{{Matrix<double>(1, 24), std::nullopt}};
    bad[0].values.data[3] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig tc;
    tc.epochs = 2;
    try {
        train(bad, sched, tiny(false), tc);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
    }
}

TEST(Train, ConditioningSensitivity) {
    SynthConfig sc;
    sc.days = 21;
    const auto frame = synthesize(sc);
    const auto stats = fit_norm(frame, {0, frame.size()});
    const auto windows = make_dataset(frame, stats, {0, frame.size()});
    ASSERT_FALSE(windows.empty());
    auto cfg = tiny(true, 1, 672);
    cfg.points_per_day = 96;
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    const auto r = train(windows, NoiseSchedule::linear(50, 1e-4, 0.02), cfg, tc);
    const auto& w = windows.front();
    ConditionTokens permuted = w.conditions;
    std::mt19937_64 rng(5);
    std::vector<std::size_t> perm(permuted.count());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < permuted.width(); ++j) permuted.tokens(i, j) = w.conditions.tokens(perm[i], j);
    const auto a = predict_noise(r.model, w.values, 20, &w.conditions);
    const auto b = predict_noise(r.model, w.values, 20, &permuted);
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_GT(d, 0.0);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    NoiseModel m(tiny(true), kFp);
    randomize(m, 21, 0.2);
    const auto bytes = serialize_checkpoint(m);
    const auto back = deserialize_checkpoint(bytes);
    EXPECT_EQ(back.config(), m.config());
    EXPECT_EQ(back.schedule().steps, kFp.steps);
    const auto x = random_matrix(1, 24, 1);
    const ConditionTokens tok{random_matrix(24, 3, 2), {"a", "b", "c"}};
    EXPECT_EQ(predict_noise(back, x.data, 9, &tok), predict_noise(m, x.data, 9, &tok));
    EXPECT_EQ(serialize_checkpoint(back), bytes);

    const std::filesystem::path dir = std::filesystem::path(ECDM_TEST_TMP) / "ckpt";
    std::filesystem::create_directories(dir);
    save_checkpoint(m, dir / "m.ckpt");
    EXPECT_EQ(serialize_checkpoint(load_checkpoint(dir / "m.ckpt")), bytes);
}

TEST(Checkpoint, CorruptionDetected) {
    const NoiseModel m(tiny(false), kFp);
    const auto bytes = serialize_checkpoint(m);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    EXPECT_THROW(deserialize_checkpoint(flipped), IoError);
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 7)), IoError);
    std::string magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(deserialize_checkpoint(magic), IoError);
    EXPECT_THROW(load_checkpoint(std::filesystem::path(ECDM_TEST_TMP) / "missing.ckpt"), IoError);
}
