#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecdm/checkpoint.hpp"
#include "ecdm/config.hpp"
#include "ecdm/dps.hpp"
#include "ecdm/io.hpp"
#include "ecdm/kde.hpp"
#include "ecdm/metrics.hpp"
#include "ecdm/plot.hpp"
#include "ecdm/sampler.hpp"
#include "ecdm/series.hpp"
#include "ecdm/synth.hpp"
#include "ecdm/trainer.hpp"

namespace ecdm::cli {

namespace fs = std::filesystem;

struct Paths {
    fs::path dir;
    fs::path cond() const { return dir / "cond.ckpt"; }
    fs::path uncond() const { return dir / "uncond.ckpt"; }
    fs::path multi() const { return dir / "multi.ckpt"; }
    fs::path norm() const { return dir / "norm_stats.json"; }
    fs::path loss(const std::string& tag) const { return dir / ("loss_" + tag + ".csv"); }
    fs::path scenarios(Date d) const { return dir / ("scenarios_" + format_date(d) + ".csv"); }
    fs::path sidecar(Date d) const { return dir / ("scenarios_" + format_date(d) + ".json"); }
    fs::path intervals(Date d) const { return dir / ("intervals_" + format_date(d) + ".csv"); }
    fs::path multi_channel(Date d, const std::string& ch) const {
        return dir / ("multi_" + format_date(d) + "_" + ch + ".csv");
    }
    fs::path consistency(Date d) const { return dir / ("consistency_" + format_date(d) + ".csv"); }
};

inline nlohmann::json stats_json(const NormStats& s) {
    nlohmann::json j;
    for (const auto& [name, c] : s.channels) j["channels"][name] = {{"mean", c.mean}, {"std", c.std}};
    return j;
}

inline NormStats stats_from_json(const nlohmann::json& j) {
    NormStats s;
    for (auto it = j.at("channels").begin(); it != j.at("channels").end(); ++it)
        s.channels[it.key()] = {it.value().at("mean").get<double>(), it.value().at("std").get<double>()};
    return s;
}

inline NormStats load_stats(const fs::path& p) {
    if (!fs::exists(p)) throw IoError("missing normalization stats " + p.string() + " (run train first)");
    try {
        return stats_from_json(nlohmann::json::parse(read_file(p)));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("cannot parse " + p.string() + ": " + e.what());
    }
}

inline SeriesFrame load_data(const RunConfig& cfg) {
    if (!fs::exists(cfg.data)) throw IoError("data file not found: " + cfg.data.string());
    return load_csv(cfg.data.string());
}

inline NoiseModel load_model(const fs::path& p) {
    if (!fs::exists(p)) throw IoError("missing checkpoint " + p.string());
    return load_checkpoint(p);
}

inline std::string loss_csv(const std::vector<double>& trace) {
    std::string out = "epoch,mean_loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) out += std::to_string(i + 1) + "," + format_number(trace[i]) + "\n";
    return out;
}

inline void warn_schedule(const NoiseSchedule& s, std::ostream& err) {
    if (s.alpha_bar(s.steps()) > 0.05)
        err << "warning: alpha_bar_T = " << s.alpha_bar(s.steps())
            << "; the schedule does not reach pure noise, samples started from N(0, I) will be biased\n";
}

inline EpochCallback progress(const std::string& tag, int epochs, std::ostream& err) {
    const int every = std::max(1, epochs / 10);
    return [tag, epochs, every, &err](int e, double loss) {
        if (e % every == 0 || e == epochs) err << tag << " epoch " << e << "/" << epochs << " loss " << loss << "\n";
    };
}

struct Context {
    RunConfig cfg;
    nlohmann::json cfg_json;
    Paths paths;
};

inline Context make_context(const std::optional<fs::path>& config, const std::vector<std::string>& overrides) {
    Context c;
    c.cfg_json = load_config_json(config, overrides);
    c.cfg = parse_config(c.cfg_json);
    c.paths.dir = c.cfg.output_dir;
    return c;
}

inline IndexRange split_range(const SeriesFrame& f, const DateRange& r, const std::string& name) {
    const IndexRange idx = f.day_range(r.first, r.last);
    if (idx.end <= idx.begin) throw PreconditionError(name + " split does not overlap the data");
    return idx;
}

inline int cmd_train(const Context& ctx, std::ostream& out, std::ostream& err) {
    const auto frame = load_data(ctx.cfg);
    const auto range = split_range(frame, ctx.cfg.train, "train");
    const auto stats = fit_norm(frame, range);
    const auto windows = make_dataset(frame, stats, range);
    const auto sched = ctx.cfg.schedule.build();
    warn_schedule(sched, err);
    DirectoryLock lock(ctx.paths.dir);

    ModelConfig mc = ctx.cfg.model;
    mc.points_per_day = static_cast<int>(frame.points_per_day());
    mc.conditional = true;
    const auto cond = train(windows, sched, mc, ctx.cfg.training, progress("cond", ctx.cfg.training.epochs, err));
    mc.conditional = false;
    mc.seed = ctx.cfg.model.seed + 1;
    TrainConfig tu = ctx.cfg.training;
    tu.seed = ctx.cfg.training.seed + 1;
    const auto uncond = train(windows, sched, mc, tu, progress("uncond", tu.epochs, err));

    write_file_atomic(ctx.paths.norm(), stats_json(stats).dump(2) + "\n");
    save_checkpoint(cond.model, ctx.paths.cond());
    save_checkpoint(uncond.model, ctx.paths.uncond());
    write_file_atomic(ctx.paths.loss("cond"), loss_csv(cond.loss_trace));
    write_file_atomic(ctx.paths.loss("uncond"), loss_csv(uncond.loss_trace));
    out << "windows " << windows.size() << "\n"
        << "final loss conditional " << cond.loss_trace.back() << "\n"
        << "final loss unconditional " << uncond.loss_trace.back() << "\n";
    return 0;
}

inline int cmd_train_multi(const Context& ctx, std::ostream& out, std::ostream& err) {
    const auto frame = load_data(ctx.cfg);
    const auto range = split_range(frame, ctx.cfg.train, "train");
    const auto stats = fit_norm(frame, range);
    const auto data = make_multi_dataset(frame, stats, range, ctx.cfg.multi_conditional);
    const auto sched = ctx.cfg.schedule.build();
    warn_schedule(sched, err);
    DirectoryLock lock(ctx.paths.dir);

    ModelConfig mc = ctx.cfg.model;
    mc.points_per_day = static_cast<int>(frame.points_per_day());
    mc.conditional = ctx.cfg.multi_conditional;
    mc.seed = ctx.cfg.model.seed + 2;
    TrainConfig tm = ctx.cfg.training;
    tm.seed = ctx.cfg.training.seed + 2;
    const auto res = train(data, sched, mc, tm, progress("multi", tm.epochs, err));
    write_file_atomic(ctx.paths.norm(), stats_json(stats).dump(2) + "\n");
    save_checkpoint(res.model, ctx.paths.multi());
    write_file_atomic(ctx.paths.loss("multi"), loss_csv(res.loss_trace));
    out << "windows " << data.size() << "\n" << "final loss multi " << res.loss_trace.back() << "\n";
    return 0;
}

inline nlohmann::json model_fingerprint(const NoiseModel& m) {
    return {{"config", nlohmann::json(m.config())},
            {"schedule", nlohmann::json(m.schedule())},
            {"crc32", detail::crc(serialize_checkpoint(m))}};
}

struct ForecastInputs {
    SeriesFrame frame;
    NormStats stats;
    NoiseSchedule sched;
};

inline ForecastInputs forecast_inputs(const Context& ctx) {
    ForecastInputs in{load_data(ctx.cfg), load_stats(ctx.paths.norm()), ctx.cfg.schedule.build()};
    return in;
}

struct ForecastResult {
    ScenarioSet set;
    IntervalForecast intervals;
};

inline ForecastResult forecast_day(const Context& ctx, const ForecastInputs& in, const NoiseModel& cond,
                                   const NoiseModel& uncond, Date day, std::ostream& err) {
    const auto window = weekly_arrange(in.frame, day, in.stats, WindowMode::inference);
    ForecastResult r{generate_set(cond, uncond, in.sched, window, ctx.cfg.sampler, in.stats), {}};
    r.intervals = interval_forecast(r.set, ctx.cfg.levels, ctx.cfg.interval_kind, in.frame.step);
    for (auto k : r.intervals.degenerate_steps)
        err << "warning: all scenarios equal at step " << k << ", zero-width interval\n";
    return r;
}

inline void write_forecast(const Context& ctx, Date day, const ForecastResult& r, const NoiseModel& cond,
                           const NoiseModel& uncond) {
    nlohmann::json side;
    side["forecast_day"] = format_date(day);
    side["sampler"] = ctx.cfg_json.at("sampler");
    side["seed"] = ctx.cfg.sampler.seed;
    side["unconditional_count"] = unconditional_count(ctx.cfg.sampler.N, ctx.cfg.sampler.p_uncond);
    side["models"] = {{"conditional", model_fingerprint(cond)}, {"unconditional", model_fingerprint(uncond)}};
    side["config"] = ctx.cfg_json;
    write_file_atomic(ctx.paths.scenarios(day), scenario_csv(r.set));
    write_file_atomic(ctx.paths.sidecar(day), side.dump(2) + "\n");
    write_file_atomic(ctx.paths.intervals(day), interval_csv(r.intervals));
}

inline int cmd_forecast(const Context& ctx, Date day, std::ostream& out, std::ostream& err) {
    const auto in = forecast_inputs(ctx);
    const auto cond = load_model(ctx.paths.cond());
    const auto uncond = load_model(ctx.paths.uncond());
    weekly_arrange(in.frame, day, in.stats, WindowMode::inference);
    DirectoryLock lock(ctx.paths.dir);
    const auto r = forecast_day(ctx, in, cond, uncond, day, err);
    write_forecast(ctx, day, r, cond, uncond);
    out << "wrote " << ctx.paths.scenarios(day).string() << " and " << ctx.paths.intervals(day).string() << "\n";
    return 0;
}

/// Scenario matrix from a scenario CSV.
inline Matrix<double> read_scenarios(const fs::path& p) {
    std::istringstream in(read_file(p));
    std::string line;
    std::getline(in, line);
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "scenario_id" || header[1] != "provenance")
        throw IoError("not a scenario CSV: " + p.string());
    std::vector<std::vector<double>> rows;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) throw IoError(p.string() + ": row " + std::to_string(row) + " has wrong width");
        std::vector<double> v;
        for (std::size_t c = 2; c < cells.size(); ++c) v.push_back(detail::parse_cell(cells[c], row));
        rows.push_back(std::move(v));
    }
    Matrix<double> m(rows.size(), header.size() - 2);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    return m;
}

inline int cmd_evaluate(const Context& ctx, const DateRange& range, std::ostream& out, std::ostream& err) {
    const auto in = forecast_inputs(ctx);
    const auto idx = in.frame.day_range(range.first, range.last);
    if (idx.end <= idx.begin) throw PreconditionError("evaluation range has no overlapping actuals");
    std::vector<Date> days;
    for (Date d = range.first; d <= range.last; d = add_days(d, 1)) {
        const auto start = in.frame.day_start(d);
        if (start && *start + in.frame.points_per_day() <= in.frame.size()) days.push_back(d);
    }
    if (days.empty()) throw PreconditionError("evaluation range has no complete days of actuals");

    std::optional<NoiseModel> cond, uncond;
    DirectoryLock lock(ctx.paths.dir);
    std::vector<EvalRecord> records;
    const auto& nl = in.frame.values(ChannelRole::net_load);
    for (Date d : days) {
        Matrix<double> scen;
        if (fs::exists(ctx.paths.scenarios(d))) {
            scen = read_scenarios(ctx.paths.scenarios(d));
        } else {
            if (!cond) {
                cond.emplace(load_model(ctx.paths.cond()));
                uncond.emplace(load_model(ctx.paths.uncond()));
            }
            const auto r = forecast_day(ctx, in, *cond, *uncond, d, err);
            write_forecast(ctx, d, r, *cond, *uncond);
            scen = r.set.scenarios;
        }
        const std::size_t begin = *in.frame.day_start(d);
        std::vector<TimePoint> ts;
        for (std::size_t k = 0; k < scen.cols; ++k) ts.push_back(in.frame.time_at(begin + k));
        const auto f = interval_forecast(scen, ts, ctx.cfg.levels, ctx.cfg.interval_kind);
        for (std::size_t k = 0; k < f.horizon(); ++k) {
            EvalRecord rec;
            rec.timestamp = ts[k];
            rec.actual = nl[begin + k];
            rec.point = f.point()[k];
            rec.season = season_of(d);
            for (std::size_t g = 0; g < f.gammas.size(); ++g) rec.bounds.emplace_back(f.gammas[g], f.bounds[g][k]);
            records.push_back(std::move(rec));
        }
    }
    const auto rep = seasonal_report(records, ctx.cfg.levels, ctx.cfg.mape_floor);
    for (const auto& w : rep.warnings) err << "warning: " << w << "\n";
    write_file_atomic(ctx.paths.dir / "report.csv", report_csv(rep));
    write_file_atomic(ctx.paths.dir / "report.json", report_json(rep).dump(2) + "\n");
    out << report_csv(rep);
    return 0;
}

inline int cmd_plot(const fs::path& intervals, const fs::path& actual, const fs::path& output, std::ostream& out) {
    std::istringstream iv(read_file(intervals));
    std::istringstream ac(read_file(actual));
    const auto table = parse_interval_csv(iv);
    const auto act = parse_actual_csv(ac);
    write_file_atomic(output, render_fan_chart(table, act));
    out << "wrote " << output.string() << "\n";
    return 0;
}

inline int cmd_multi(const Context& ctx, Date day, std::ostream& out, std::ostream&) {
    const auto model = load_model(ctx.paths.multi());
    const auto in = forecast_inputs(ctx);
    const auto window = multi_arrange(in.frame, day, in.stats, WindowMode::inference);
    DirectoryLock lock(ctx.paths.dir);
    const auto set = guided_sample(model, in.sched, window, ctx.cfg.dps, ctx.cfg.sampler);
    for (std::size_t r = 0; r < 3; ++r)
        write_file_atomic(ctx.paths.multi_channel(day, kMultiChannels[r]), scenario_csv(set.channels[r]));
    write_file_atomic(ctx.paths.consistency(day), consistency_csv(set));
    auto m = set.mean_abs_residual();
    std::sort(m.begin(), m.end());
    out << "median mean_abs_residual_mw " << m[m.size() / 2] << "\n";
    return 0;
}

inline int cmd_synth(const SynthConfig& sc, const fs::path& output, std::ostream& out) {
    write_file_atomic(output, frame_csv(synthesize(sc)));
    out << "wrote " << output.string() << "\n";
    return 0;
}

/// Entry point; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Energy-conditioned diffusion scenario forecasting"};
    app.require_subcommand(1);
    std::optional<std::string> config;
    std::vector<std::string> overrides;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config, "JSON run config");
        sub->add_option("--set", overrides, "override a config key, e.g. --set train.epochs=10")->take_all();
    };

    SynthConfig sc;
    std::string synth_out = "data.csv", synth_start;
    auto* synth = app.add_subcommand("synth", "write the synthetic dataset");
    synth->add_option("-o,--out", synth_out, "output CSV");
    synth->add_option("--days", sc.days, "number of days");
    synth->add_option("--seed", sc.seed, "random seed");
    synth->add_option("--start", synth_start, "first day, YYYY-MM-DD");

    auto* train_cmd = app.add_subcommand("train", "train the conditional and unconditional models");
    add_config(train_cmd);
    auto* train_multi = app.add_subcommand("train-multi", "train the load/RES/net-load model");
    add_config(train_multi);

    std::string day_text;
    auto* forecast = app.add_subcommand("forecast", "scenarios and intervals for one day");
    add_config(forecast);
    forecast->add_option("--day", day_text, "forecast day, YYYY-MM-DD")->required();

    std::string from_text, to_text;
    auto* evaluate = app.add_subcommand("evaluate", "score forecasts over a date range");
    add_config(evaluate);
    evaluate->add_option("--from", from_text, "first day (default: test split)");
    evaluate->add_option("--to", to_text, "last day (default: test split)");

    std::string plot_intervals, plot_actual, plot_out = "forecast.svg";
    auto* plot = app.add_subcommand("plot", "render an interval CSV as an SVG fan chart");
    plot->add_option("--intervals", plot_intervals, "interval CSV")->required();
    plot->add_option("--actual", plot_actual, "CSV with timestamp and net_load columns")->required();
    plot->add_option("-o,--out", plot_out, "output SVG");

    auto* multi = app.add_subcommand("multi", "guided load/RES/net-load scenarios for one day");
    add_config(multi);
    multi->add_option("--day", day_text, "forecast day, YYYY-MM-DD")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return exit_code_for(ErrorKind::config);
    }

    try {
        const std::optional<fs::path> cfg_path = config ? std::optional<fs::path>(*config) : std::nullopt;
        if (cfg_path && !fs::exists(*cfg_path)) throw IoError("config file not found: " + cfg_path->string());
        if (synth->parsed()) {
            if (!synth_start.empty()) sc.start = parse_date(synth_start);
            return cmd_synth(sc, synth_out, out);
        }
        if (plot->parsed()) return cmd_plot(plot_intervals, plot_actual, plot_out, out);
        const Context ctx = make_context(cfg_path, overrides);
        if (train_cmd->parsed()) return cmd_train(ctx, out, err);
        if (train_multi->parsed()) return cmd_train_multi(ctx, out, err);
        if (forecast->parsed()) return cmd_forecast(ctx, parse_date(day_text), out, err);
        if (multi->parsed()) return cmd_multi(ctx, parse_date(day_text), out, err);
        if (evaluate->parsed()) {
            DateRange r = ctx.cfg.test;
            if (!from_text.empty()) r.first = parse_date(from_text);
            if (!to_text.empty()) r.last = parse_date(to_text);
            if (r.last < r.first) throw PreconditionError("evaluation range is empty");
            return cmd_evaluate(ctx, r, out, err);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(ErrorKind::io);
    }
    return 0;
}

} // namespace ecdm::cli
