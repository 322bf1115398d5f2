#include <gtest/gtest.h>

#include <random>

#include "ecdm/dps.hpp"
#include "ecdm/synth.hpp"

using namespace ecdm;

namespace {

const NoiseSchedule kSched = NoiseSchedule::linear(50, 1e-4, 0.02);
const Matrix<double>* const kNoCond = nullptr;

ModelConfig tiny3(int length, bool conditional = false, int d_feat = 0) {
    ModelConfig c;
    c.depth = 2;
    c.heads = 2;
    c.base_channels = 4;
    c.time_embed_dim = 8;
    c.conditional = conditional;
    c.d_feat = d_feat;
    c.in_channels = 3;
    c.window_length = length;
    c.points_per_day = 8;
    c.seed = 5;
    return c;
}

std::array<ChannelStats, 3> identity_stats() {
    ChannelStats s;
    s.mean = 0.0;
    s.std = 1.0;
    return {s, s, s};
}

std::array<ChannelStats, 3> mixed_stats() {
    std::array<ChannelStats, 3> s;
    s[0].mean = 800;
    s[0].std = 150;
    s[1].mean = 200;
    s[1].std = 90;
    s[2].mean = 600;
    s[2].std = 170;
    return s;
}

template <typename T>
void randomize(nn::UNet<T>& m, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& p : m.params().all())
        for (auto& v : p.value) v = static_cast<T>(n(rng));
}

template <typename T>
void zero(nn::UNet<T>& m) {
    for (auto& p : m.params().all()) std::fill(p.value.begin(), p.value.end(), T{});
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

} // namespace

TEST(MeasurementResidual, Examples) {
    Matrix<double> x(3, 1);
    x.data = {5, 2, 2};
    EXPECT_EQ(measurement_residual(x, identity_stats())[0], 1.0);
    x.data = {5, 2, 3};
    EXPECT_EQ(measurement_residual(x, identity_stats())[0], 0.0);
    Matrix<double> y(3, 4);
    y.data = random_vec(12, 1);
    const auto r = measurement_residual(y, identity_stats());
    for (auto& v : y.data) v *= 2.5;
    const auto r2 = measurement_residual(y, identity_stats());
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r2[i], 2.5 * r[i], 1e-12);
    const auto s = mixed_stats();
    x.data = {0.5, -1.0, 0.25};
    EXPECT_NEAR(measurement_residual(x, s)[0], (800 + 75) - (200 - 90) - (600 + 42.5), 1e-9);
    EXPECT_THROW(measurement_residual(Matrix<double>(2, 3), s), PreconditionError);
}

TEST(DpsGradient, MatchesFiniteDifferences) {
    for (bool conditional : {false, true}) {
        nn::UNet<double> m(tiny3(16, conditional, conditional ? 3 : 0), kSched.fingerprint());
        randomize(m, 2, 0.3);
        const auto stats = mixed_stats();
        auto xt = random_vec(48, 3);
        Matrix<double> cond(16, 3);
        cond.data = random_vec(48, 4);
        const Matrix<double>* c = conditional ? &cond : nullptr;
        for (int t : {3, 25, 50}) {
            const auto grad = dps_gradient(m, xt, t, c, kSched, stats);
            for (std::size_t k : {0u, 9u, 17u, 30u, 47u}) {
                const double orig = xt[k], h = 1e-4;
                xt[k] = orig + h;
                const double up = dps_step(m, xt, t, c, kSched, stats).objective;
                xt[k] = orig - h;
                const double down = dps_step(m, xt, t, c, kSched, stats).objective;
                xt[k] = orig;
                const double fd = (up - down) / (2 * h);
                EXPECT_LE(std::abs(grad[k] - fd), 1e-3 * std::max({std::abs(fd), std::abs(grad[k]), 1e-6}))
                    << t << " " << k << " " << grad[k] << " vs " << fd;
            }
        }
    }
}

TEST(DpsGradient, ZeroAtConsistentEstimate) {
    nn::UNet<double> m(tiny3(8), kSched.fingerprint());
    zero(m);
    std::vector<double> xt = random_vec(24, 5);
    for (std::size_t i = 0; i < 8; ++i) xt[i] = xt[8 + i] + xt[16 + i];
    const auto s = dps_step(m, xt, 10, kNoCond, kSched, identity_stats());
    EXPECT_NEAR(s.objective, 0.0, 1e-20);
    for (double g : s.gradient) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(DpsGradient, ScalesWithResidual) {
    nn::UNet<double> m(tiny3(8), kSched.fingerprint());
    zero(m);
    std::vector<double> xt = random_vec(24, 6);
    const auto g1 = dps_gradient(m, xt, 20, kNoCond, kSched, identity_stats());
    for (auto& v : xt) v *= 2;
    const auto g2 = dps_gradient(m, xt, 20, kNoCond, kSched, identity_stats());
    for (std::size_t i = 0; i < 24; ++i) EXPECT_NEAR(g2[i], 2 * g1[i], 1e-9 * std::max(1.0, std::abs(g1[i])));
}

TEST(DpsGradient, RejectsSingleChannelModel) {
    auto cfg = tiny3(8);
    cfg.in_channels = 1;
    nn::UNet<double> m(cfg, kSched.fingerprint());
    EXPECT_THROW(dps_step(m, std::vector<double>(8, 0.0), 5, kNoCond, kSched, identity_stats()), PreconditionError);
}

TEST(GuidanceScale, Weighting) {
    DpsConfig cfg;
    cfg.zeta = 2.0;
    const auto s = mixed_stats();
    const double k = (150.0 * 150 + 90 * 90 + 170 * 170) / (170.0 * 170);
    const double ab = kSched.alpha_bar(10);
    EXPECT_NEAR(guidance_scale(cfg, kSched, 10, s), 2.0 * 0.0025 / (0.0025 + k * (1 - ab) / ab), 1e-12);
    EXPECT_GT(guidance_scale(cfg, kSched, 1, s), guidance_scale(cfg, kSched, 50, s));
    cfg.variance_weighting = false;
    EXPECT_EQ(guidance_scale(cfg, kSched, 10, s), 2.0);
    cfg.zeta = -1;
    EXPECT_THROW(validate(cfg), ConfigError);
    cfg.zeta = 1;
    cfg.sigma_meas = 0;
    EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(GuidedEps, FirstOrderDescent) {
    NoiseModel m(tiny3(16), kSched.fingerprint());
    randomize(m, 7, 0.2);
    const auto stats = mixed_stats();
    const std::vector<double> xt = random_vec(48, 8), zero_z(48, 0.0);
    const std::optional<Matrix<float>> none;
    const Matrix<float>* no_cond = nullptr;
    const EpsFn plain = model_eps(m, nullptr);
    for (int t : {5, 20, 45}) {
        for (double zeta : {0.01, 0.1}) {
            DpsConfig cfg;
            cfg.zeta = zeta;
            cfg.variance_weighting = false;
            const auto ge = guided_eps(m, kSched, none, stats, cfg)(xt, t);
            const auto pe = plain(xt, t);
            const auto mu_g = reverse_step(xt, t, ge, zero_z, kSched);
            const auto mu_p = reverse_step(xt, t, pe, zero_z, kSched);
            std::vector<double> shifted(xt);
            for (std::size_t i = 0; i < 48; ++i) shifted[i] += mu_g[i] - mu_p[i];
            const double at_xt = dps_step(m, xt, t, no_cond, kSched, stats).objective;
            EXPECT_LE(dps_step(m, shifted, t, no_cond, kSched, stats).objective, at_xt) << t << " " << zeta;
            EXPECT_LE(dps_step(m, mu_g, t - 1, no_cond, kSched, stats).objective,
                      dps_step(m, mu_p, t - 1, no_cond, kSched, stats).objective)
                << t << " " << zeta;
        }
    }
}

namespace {

struct MultiFixture {
    MultiWindow window;
    NoiseModel model;
};

const MultiFixture& multi_fixture() {
    static const MultiFixture f = [] {
        SynthConfig sc;
        sc.days = 14;
        const auto frame = synthesize(sc);
        const auto stats = fit_norm(frame, {0, frame.size()});
        auto w = multi_arrange(frame, Date{std::chrono::sys_days{sc.start} + std::chrono::days{9}}, stats,
                               WindowMode::inference);
        auto cfg = tiny3(static_cast<int>(w.length()), true, static_cast<int>(w.conditions.width()));
        cfg.points_per_day = 96;
        return MultiFixture{std::move(w), NoiseModel(cfg, kSched.fingerprint())};
    }();
    return f;
}

} // namespace

TEST(GuidedSample, ZeroZetaIsPlainSampler) {
    const auto& f = multi_fixture();
    DpsConfig cfg;
    cfg.zeta = 0.0;
    SamplerConfig sc;
    sc.N = 3;
    sc.seed = 21;
    const auto out = guided_sample(f.model, kSched, f.window, cfg, sc);
    auto rng = scenario_rng(21, 2);
    const auto x0 = impute(model_eps(f.model, &f.window.conditions), kSched, f.window.values.data, f.window.mask, rng);
    const std::size_t n = f.window.length(), off = f.window.forecast_offset();
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 96; ++j)
            ASSERT_EQ(out.channels[r].scenarios(2, j), f.window.stats[r].denormalize(x0[r * n + off + j]));
    for (std::size_t j = 0; j < 96; ++j)
        EXPECT_EQ(out.residual(2, j),
                  out.channels[0].scenarios(2, j) - out.channels[1].scenarios(2, j) - out.channels[2].scenarios(2, j));
}

TEST(GuidedSample, DeterministicAndShaped) {
    const auto& f = multi_fixture();
    DpsConfig cfg;
    SamplerConfig sc;
    sc.N = 2;
    sc.seed = 4;
    sc.threads = 1;
    const auto a = guided_sample(f.model, kSched, f.window, cfg, sc);
    sc.threads = 2;
    const auto b = guided_sample(f.model, kSched, f.window, cfg, sc);
    EXPECT_EQ(a.residual.data, b.residual.data);
    EXPECT_EQ(a.channels[1].horizon(), 96u);
    const auto csv = consistency_csv(a);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "scenario_id,mean_abs_residual_mw");
}

TEST(GuidedSample, RejectsSingleChannelModel) {
    const auto& f = multi_fixture();
    auto cfg = f.model.config();
    cfg.in_channels = 1;
    const NoiseModel one(cfg, kSched.fingerprint());
    EXPECT_THROW(guided_sample(one, kSched, f.window, DpsConfig{}, SamplerConfig{}), PreconditionError);
}

TEST(MultiArrange, RowsMatchChannelWindows) {
    SynthConfig sc;
    sc.days = 8;
    const auto frame = synthesize(sc);
    const auto stats = fit_norm(frame, {0, frame.size()});
    const auto day = Date{std::chrono::sys_days{sc.start} + std::chrono::days{7}};
    const auto w = multi_arrange(frame, day, stats);
    ASSERT_EQ(w.values.rows, 3u);
    const auto single = weekly_arrange(frame, day, stats, WindowMode::training);
    const auto nl = w.channel_window(2);
    EXPECT_EQ(nl.values, single.values);
    EXPECT_EQ(nl.mask, single.mask);
    const auto r = measurement_residual(w.values, w.stats);
    for (double v : r) EXPECT_LT(std::abs(v), 1e-2);
    EXPECT_EQ(make_multi_dataset(frame, stats, {0, frame.size()}).size(), 2u);
}
