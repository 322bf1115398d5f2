#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecdm/checkpoint.hpp"
#include "ecdm/dps.hpp"
#include "ecdm/io.hpp"
#include "ecdm/kde.hpp"
#include "ecdm/sampler.hpp"
#include "ecdm/time.hpp"
#include "ecdm/trainer.hpp"

namespace ecdm {

struct DateRange {
    Date first{};
    Date last{};
};

struct ScheduleConfig {
    int steps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
};

struct RunConfig {
    std::filesystem::path data;
    DateRange train;
    DateRange test;
    ScheduleConfig schedule;
    ModelConfig model;
    bool multi_conditional = true;
    TrainConfig training;
    SamplerConfig sampler;
    DpsConfig dps;
    std::vector<double> levels{0.5, 0.7, 0.9};
    IntervalKind interval_kind = IntervalKind::adaptive;
    std::optional<double> mape_floor;
    std::filesystem::path output_dir = "out";
};

inline nlohmann::json default_config_json() {
    const RunConfig c;
    nlohmann::json j;
    j["data"] = "data.csv";
    j["split"]["train"] = {"2017-03-01", "2017-06-28"};
    j["split"]["test"] = {"2017-06-29", "2017-07-12"};
    j["schedule"] = {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}};
    j["model"] = {{"depth", c.model.depth},
                  {"heads", c.model.heads},
                  {"base_channels", c.model.base_channels},
                  {"time_embed_dim", c.model.time_embed_dim},
                  {"seed", c.model.seed}};
    j["multi"] = {{"conditional", c.multi_conditional}};
    j["train"] = {{"learning_rate", c.training.learning_rate},
                  {"batch_size", c.training.batch_size},
                  {"epochs", c.training.epochs},
                  {"seed", c.training.seed}};
    j["sampler"] = {{"N", c.sampler.N},
                    {"p_uncond", c.sampler.p_uncond},
                    {"seed", c.sampler.seed},
                    {"literal_noise_index", c.sampler.literal_noise_index},
                    {"threads", c.sampler.threads}};
    j["dps"] = {{"zeta", c.dps.zeta}, {"sigma_meas", c.dps.sigma_meas}, {"variance_weighting", c.dps.variance_weighting}};
    j["intervals"] = {{"levels", c.levels}, {"kind", to_string(c.interval_kind)}};
    j["evaluate"] = {{"mape_floor", nullptr}};
    j["output_dir"] = "out";
    return j;
}

namespace detail {

/// Parses the right-hand side of `--set key=value`: JSON when it parses, otherwise a string.
inline nlohmann::json parse_override_value(const std::string& v) {
    try {
        return nlohmann::json::parse(v);
    } catch (const nlohmann::json::parse_error&) {
        return v;
    }
}

inline void merge(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix) {
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        if (base[it.key()].is_object() && it.value().is_object()) merge(base[it.key()], it.value(), key);
        else base[it.key()] = it.value();
    }
}

inline DateRange parse_range(const nlohmann::json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 2) throw ConfigError(key + " must be [first, last]");
    DateRange r{parse_date(j[0].get<std::string>()), parse_date(j[1].get<std::string>())};
    if (r.last < r.first) throw ConfigError(key + " ends before it starts");
    return r;
}

} // namespace detail

/// Applies `key.path=value` to a config document; unknown keys are rejected.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = detail::parse_override_value(assignment.substr(eq + 1));
}

inline RunConfig parse_config(const nlohmann::json& j) {
    RunConfig c;
    try {
        c.data = j.at("data").get<std::string>();
        c.train = detail::parse_range(j.at("split").at("train"), "split.train");
        c.test = detail::parse_range(j.at("split").at("test"), "split.test");
        const auto& s = j.at("schedule");
        c.schedule = {s.at("steps").get<int>(), s.at("beta_start").get<double>(), s.at("beta_end").get<double>()};
        const auto& m = j.at("model");
        c.model.depth = m.at("depth").get<int>();
        c.model.heads = m.at("heads").get<int>();
        c.model.base_channels = m.at("base_channels").get<int>();
        c.model.time_embed_dim = m.at("time_embed_dim").get<int>();
        c.model.seed = m.at("seed").get<std::uint64_t>();
        c.multi_conditional = j.at("multi").at("conditional").get<bool>();
        const auto& t = j.at("train");
        c.training = {t.at("learning_rate").get<double>(), t.at("batch_size").get<int>(), t.at("epochs").get<int>(),
                      t.at("seed").get<std::uint64_t>()};
        const auto& sm = j.at("sampler");
        c.sampler = {sm.at("N").get<int>(), sm.at("p_uncond").get<double>(), sm.at("seed").get<std::uint64_t>(),
                     sm.at("literal_noise_index").get<bool>(), sm.at("threads").get<int>()};
        const auto& d = j.at("dps");
        c.dps = {d.at("zeta").get<double>(), d.at("sigma_meas").get<double>(), d.at("variance_weighting").get<bool>()};
        c.levels = j.at("intervals").at("levels").get<std::vector<double>>();
        c.interval_kind = parse_interval_kind(j.at("intervals").at("kind").get<std::string>());
        const auto& floor = j.at("evaluate").at("mape_floor");
        if (!floor.is_null()) c.mape_floor = floor.get<double>();
        c.output_dir = j.at("output_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    if (c.training.learning_rate <= 0 || c.training.batch_size <= 0 || c.training.epochs <= 0)
        throw ConfigError("train.learning_rate, train.batch_size and train.epochs must be positive");
    if (c.model.depth < 1 || c.model.heads < 1 || c.model.base_channels < 1)
        throw ConfigError("model depth, heads and base_channels must be positive");
    unconditional_count(c.sampler.N, c.sampler.p_uncond);
    if (c.sampler.threads < 0) throw ConfigError("sampler.threads must be >= 0");
    validate(c.dps);
    validate_gammas(c.levels);
    if (c.mape_floor && !(*c.mape_floor > 0.0)) throw ConfigError("evaluate.mape_floor must be positive");
    try {
        c.schedule.build();
    } catch (const Error& e) {
        throw ConfigError(std::string("schedule: ") + e.what());
    }
    return c;
}

/// Defaults, then the file (if any), then each `key=value` override.
inline nlohmann::json load_config_json(const std::optional<std::filesystem::path>& path,
                                       const std::vector<std::string>& overrides) {
    nlohmann::json j = default_config_json();
    if (path) {
        nlohmann::json file;
        try {
            file = nlohmann::json::parse(read_file(*path));
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("cannot parse config " + path->string() + ": " + e.what());
        }
        detail::merge(j, file, "");
        if (file.contains("data") && j["data"].is_string()) {
            const std::filesystem::path p = j["data"].get<std::string>();
            if (p.is_relative()) j["data"] = (path->parent_path() / p).string();
        }
    }
    for (const auto& o : overrides) apply_override(j, o);
    return j;
}

} // namespace ecdm
