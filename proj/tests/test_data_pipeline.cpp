#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ecdm/arrange.hpp"
#include "ecdm/normalize.hpp"
#include "ecdm/series.hpp"
#include "ecdm/synth.hpp"

using namespace ecdm;

namespace {

std::string csv_rows(std::size_t n, bool with_net = false, std::size_t skip_from = 0, std::size_t skip_count = 0) {
    std::ostringstream s;
    s << "timestamp,load,pv,wind" << (with_net ? ",net_load" : "") << ",weather_t\n";
    const TimePoint t0{std::chrono::sys_days{Date{std::chrono::year{2021}, std::chrono::month{3}, std::chrono::day{1}}}};
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= skip_from && i < skip_from + skip_count) continue;
        const double load = 100.0 + static_cast<double>(i % 96);
        s << format_timestamp(t0 + std::chrono::minutes{15} * static_cast<long>(i)) << "," << load << ",5,3";
        if (with_net) s << "," << load - 8.0;
        s << "," << static_cast<double>(i % 7) << "\n";
    }
    return s.str();
}

SeriesFrame frame_days(int days, Date start = Date{std::chrono::year{2021}, std::chrono::month{3}, std::chrono::day{1}}) {
    SynthConfig sc;
    sc.days = days;
    sc.start = start;
    return synthesize(sc);
}

Date ymd(int y, unsigned m, unsigned d) { return Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}}; }

} // namespace

TEST(Time, ParsesIsoTimestamps) {
    const auto a = parse_timestamp("2021-03-01T00:15:00");
    const auto b = parse_timestamp("2021-03-01 00:15");
    EXPECT_EQ(a, b);
    EXPECT_EQ(format_timestamp(a), "2021-03-01T00:15:00");
    EXPECT_THROW(parse_timestamp("03/01/2021"), IoError);
    EXPECT_THROW(parse_date("2021-02-30"), ConfigError);
}

TEST(Time, WeekdayIsMondayBased) {
    EXPECT_EQ(weekday_index(ymd(2021, 3, 1)), 0); // Monday
    EXPECT_EQ(weekday_index(ymd(2021, 3, 7)), 6);
    EXPECT_EQ(days_between(ymd(2021, 2, 27), ymd(2021, 3, 2)), 3);
}

TEST(LoadCsv, SynthesizesNetLoad) {
    std::istringstream in("timestamp,load,pv,wind\n2021-01-01T00:00,10,2,1\n2021-01-01T00:15,11,2,1\n");
    const auto f = load_csv(in);
    ASSERT_EQ(f.size(), 2u);
    EXPECT_EQ(f.values(ChannelRole::net_load), (std::vector<double>{7.0, 8.0}));
    EXPECT_EQ(f.step, std::chrono::seconds{900});
}

TEST(LoadCsv, RejectsShuffledTimestamps) {
    std::istringstream in("timestamp,load,pv,wind\n2021-01-01T00:15,10,2,1\n2021-01-01T00:00,11,2,1\n");
    try {
        load_csv(in);
        FAIL() << "expected an error";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("non-monotonic timestamps"), std::string::npos);
    }
}

TEST(LoadCsv, FullWeekHas672Points) {
    std::istringstream in(csv_rows(96 * 7));
    const auto f = load_csv(in);
    EXPECT_EQ(f.size(), 672u);
    EXPECT_EQ(f.points_per_day(), 96u);
    EXPECT_EQ(f.weather_channels().size(), 1u);
}

TEST(LoadCsv, MissingColumnIsNamed) {
    std::istringstream in("timestamp,load,pv\n2021-01-01T00:00,10,2\n2021-01-01T00:15,11,2\n");
    try {
        load_csv(in);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("'wind'"), std::string::npos);
    }
}

TEST(LoadCsv, ShortGapsInterpolated) {
    std::istringstream in(csv_rows(200, false, 50, 4));
    const auto f = load_csv(in);
    EXPECT_EQ(f.size(), 200u);
    EXPECT_EQ(f.interpolated_points, 4u);
    const auto& load = f.values(ChannelRole::load);
    for (std::size_t i = 49; i <= 54; ++i) EXPECT_NEAR(load[i], 100.0 + static_cast<double>(i), 1e-9);
}

TEST(LoadCsv, LongGapRejectedWithRange) {
    std::istringstream in(csv_rows(200, false, 50, 5));
    try {
        load_csv(in);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("gap of 5 points"), std::string::npos);
    }
}

TEST(LoadCsv, RecordsNetLoadResidual) {
    std::istringstream in(csv_rows(10, true));
    const auto f = load_csv(in);
    EXPECT_NEAR(f.net_load_residual_max, 0.0, 1e-12);
}

TEST(Normalize, ZeroVarianceNamesChannel) {
    const std::vector<double> xs{1, 1, 1};
    try {
        channel_stats(xs, "pv");
        FAIL();
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("zero variance in channel 'pv'"), std::string::npos);
    }
}

TEST(Normalize, PopulationStd) {
    const std::vector<double> xs{0, 2};
    const auto s = channel_stats(xs, "x");
    EXPECT_DOUBLE_EQ(s.mean, 1.0);
    EXPECT_DOUBLE_EQ(s.std, 1.0);
}

TEST(Normalize, RoundTrip) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> d(500.0, 300.0);
    const ChannelStats s{412.5, 87.25};
    for (int i = 0; i < 1000; ++i) {
        const double x = d(rng);
        EXPECT_LE(std::abs(s.denormalize(s.normalize(x)) - x), 1e-9 * std::max(1.0, std::abs(x)));
    }
}

TEST(Normalize, FitsOnSplitOnly) {
    const auto f = frame_days(20);
    const auto split = f.day_range(ymd(2021, 3, 1), ymd(2021, 3, 10));
    const auto stats = fit_norm(f, split);
    const auto& load = f.values(ChannelRole::load);
    double mean = 0;
    for (std::size_t i = split.begin; i < split.end; ++i) mean += load[i];
    mean /= static_cast<double>(split.end - split.begin);
    EXPECT_NEAR(stats.at("load").mean, mean, 1e-9);
    EXPECT_TRUE(stats.channels.count(kResChannel));
}

TEST(Arrange, WednesdayForecast) {
    const auto f = frame_days(14);
    const auto stats = fit_norm(f, {0, f.size()});
    const Date wed = ymd(2021, 3, 10);
    ASSERT_EQ(weekday_index(wed), 2);
    const auto w = weekly_arrange(f, wed, stats);
    const std::size_t ppd = 96;
    for (std::size_t i = 0; i < w.length(); ++i) EXPECT_EQ(w.mask[i], i / ppd != 2) << i;
    // arranged slot j holds the weekday j (Monday first)
    const std::size_t begin = window_begin(f, wed);
    for (std::size_t slot = 0; slot < 7; ++slot) {
        const auto tp = f.time_at(begin + w.source_indices[slot * ppd]);
        EXPECT_EQ(weekday_index(Date{std::chrono::floor<std::chrono::days>(tp)}), static_cast<int>(slot));
    }
    EXPECT_EQ(w.conditions.count(), ppd);
    EXPECT_EQ(w.conditions.width(), 3 + kCalendarFeatures);
}

TEST(Arrange, MondayAndSundayForecast) {
    const auto f = frame_days(21);
    const auto stats = fit_norm(f, {0, f.size()});
    const auto mon = weekly_arrange(f, ymd(2021, 3, 15), stats);
    EXPECT_EQ(mon.forecast_weekday, 0);
    EXPECT_FALSE(mon.mask[0]);
    EXPECT_TRUE(mon.mask[96]);
    const auto sun = weekly_arrange(f, ymd(2021, 3, 14), stats);
    for (std::size_t i = 0; i < sun.length(); ++i) EXPECT_EQ(sun.source_indices[i], i);
}

TEST(Arrange, DearrangeRestoresChronology) {
    const auto f = frame_days(21);
    const auto stats = fit_norm(f, {0, f.size()});
    const auto& nl = f.values(ChannelRole::net_load);
    for (int d = 6; d < 21; ++d) {
        const Date day = add_days(ymd(2021, 3, 1), d);
        const auto w = weekly_arrange(f, day, stats);
        const auto chrono = weekly_dearrange(w);
        const std::size_t begin = window_begin(f, day);
        const auto& cs = stats.at("net_load");
        for (std::size_t i = 0; i < chrono.size(); ++i) EXPECT_EQ(chrono[i], cs.normalize(nl[begin + i]));
    }
}

TEST(Arrange, RandomPermutationRoundTrip) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n;
    for (int w = 0; w < 7; ++w) {
        const auto src = weekly_permutation(w, 96);
        std::vector<double> x(672);
        for (auto& v : x) v = n(rng);
        std::vector<double> arranged(672);
        for (std::size_t i = 0; i < 672; ++i) arranged[i] = x[src[i]];
        EXPECT_EQ(dearrange(arranged, src), x);
    }
}

TEST(Arrange, InferenceZeroFillsForecastDay) {
    const auto f = frame_days(10);
    const auto stats = fit_norm(f, {0, f.size()});
    const auto w = weekly_arrange(f, ymd(2021, 3, 9), stats, WindowMode::inference);
    for (std::size_t i = 0; i < w.length(); ++i)
        if (!w.mask[i]) EXPECT_EQ(w.values[i], 0.0);
}

TEST(Arrange, IncompleteHistoryRejected) {
    const auto f = frame_days(10);
    const auto stats = fit_norm(f, {0, f.size()});
    EXPECT_THROW(weekly_arrange(f, ymd(2021, 3, 5), stats), PreconditionError);
    EXPECT_THROW(weekly_arrange(f, ymd(2021, 3, 11), stats), PreconditionError);
}

TEST(Arrange, ConditionsComeFromForecastDay) {
    const auto f = frame_days(10);
    const auto stats = fit_norm(f, {0, f.size()});
    const Date day = ymd(2021, 3, 8);
    const auto w = weekly_arrange(f, day, stats);
    const std::size_t start = *f.day_start(day);
    const auto* temp = f.find("weather_temperature");
    for (std::size_t k = 0; k < 96; ++k) {
        EXPECT_DOUBLE_EQ(w.conditions.tokens(k, 0), stats.at("weather_temperature").normalize(temp->values[start + k]));
        EXPECT_LE(f.time_at(start + k), f.time_at(start + 95));
    }
    // Monday, so the weekend flag is off and day-of-week sin is 0
    EXPECT_EQ(w.conditions.tokens(0, 3 + 4), 0.0);
    EXPECT_NEAR(w.conditions.tokens(0, 3 + 2), 0.0, 1e-12);
}

TEST(Dataset, EligibilityCounts) {
    const auto f8 = frame_days(8);
    const auto stats = fit_norm(f8, {0, f8.size()});
    const auto ds8 = make_dataset(f8, stats, {0, f8.size()});
    ASSERT_EQ(ds8.size(), 2u);
    EXPECT_EQ(ds8[0].forecast_day, ymd(2021, 3, 7));
    EXPECT_EQ(ds8[1].forecast_day, ymd(2021, 3, 8));
    const auto f7 = frame_days(7);
    EXPECT_EQ(make_dataset(f7, fit_norm(f7, {0, f7.size()}), {0, f7.size()}).size(), 1u);
    const auto f6 = frame_days(6);
    EXPECT_THROW(make_dataset(f6, fit_norm(f6, {0, f6.size()}), {0, f6.size()}), PreconditionError);
}

TEST(Dataset, TrainingWindowsKeepGroundTruth) {
    const auto f = frame_days(9);
    const auto stats = fit_norm(f, {0, f.size()});
    for (const auto& w : make_dataset(f, stats, {0, f.size()})) {
        const std::size_t start = *f.day_start(w.forecast_day);
        const auto& nl = f.values(ChannelRole::net_load);
        for (std::size_t k = 0; k < 96; ++k)
            EXPECT_DOUBLE_EQ(w.values[w.forecast_offset() + k], stats.at("net_load").normalize(nl[start + k]));
    }
}

TEST(Synth, NetLoadIdentityAndPositivity) {
    const auto f = frame_days(40);
    const auto& l = f.values(ChannelRole::load);
    const auto& p = f.values(ChannelRole::pv);
    const auto& w = f.values(ChannelRole::wind);
    const auto& nl = f.values(ChannelRole::net_load);
    for (std::size_t i = 0; i < f.size(); ++i) {
        EXPECT_NEAR(nl[i], l[i] - p[i] - w[i], 2e-4);
        EXPECT_GT(nl[i], 0.0);
    }
    std::istringstream in(frame_csv(f));
    const auto g = load_csv(in);
    EXPECT_EQ(g.size(), f.size());
    EXPECT_LT(g.net_load_residual_max, 2e-4);
}
