#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecdm/kde.hpp"
#include "ecdm/time.hpp"

namespace ecdm {

enum class Season { spring, summer, autumn, winter };

inline const char* to_string(Season s) {
    switch (s) {
    case Season::spring: return "spring";
    case Season::summer: return "summer";
    case Season::autumn: return "autumn";
    case Season::winter: return "winter";
    }
    return "?";
}

/// Meteorological seasons: Mar-May spring, Jun-Aug summer, Sep-Nov autumn, Dec-Feb winter.
inline Season season_of(Date d) {
    const unsigned m = static_cast<unsigned>(d.month());
    if (m >= 3 && m <= 5) return Season::spring;
    if (m >= 6 && m <= 8) return Season::summer;
    if (m >= 9 && m <= 11) return Season::autumn;
    return Season::winter;
}

struct EvalRecord {
    TimePoint timestamp{};
    double actual = 0.0;
    double point = 0.0;
    std::vector<std::pair<double, Interval>> bounds;
    Season season = Season::spring;

    const Interval& bound(double gamma) const {
        for (const auto& [g, iv] : bounds)
            if (std::abs(g - gamma) < 1e-9) return iv;
        throw PreconditionError("record has no interval for level " + format_number(gamma));
    }
};

struct MapeResult {
    double percent = 0.0;
    std::size_t excluded = 0;
};

/// Points with |actual| < floor are skipped.
inline MapeResult mape(std::span<const double> actual, std::span<const double> predicted, double floor) {
    require_same_size(actual.size(), predicted.size(), "mape");
    if (!(floor > 0.0)) throw PreconditionError("MAPE floor must be positive");
    MapeResult r;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        if (std::abs(actual[i]) < floor) {
            ++r.excluded;
            continue;
        }
        sum += std::abs(actual[i] - predicted[i]) / std::abs(actual[i]);
        ++used;
    }
    if (used == 0) throw PreconditionError("MAPE: every point is below the floor");
    r.percent = 100.0 * sum / static_cast<double>(used);
    return r;
}

inline double default_mape_floor(std::span<const double> actual) {
    double s = 0.0;
    for (double v : actual) s += std::abs(v);
    return 0.01 * s / static_cast<double>(actual.size());
}

namespace detail {
inline void require_records(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw PreconditionError("no evaluation records");
}
} // namespace detail

/// Coverage minus gamma, in percent.
inline double ace(const std::vector<EvalRecord>& records, double gamma) {
    detail::require_records(records);
    std::size_t hit = 0;
    for (const auto& r : records) {
        const auto& iv = r.bound(gamma);
        if (r.actual >= iv.lower && r.actual <= iv.upper) ++hit;
    }
    return 100.0 * (static_cast<double>(hit) / static_cast<double>(records.size()) - gamma);
}

inline double piaw(const std::vector<EvalRecord>& records, double gamma) {
    detail::require_records(records);
    double s = 0.0;
    for (const auto& r : records) {
        const auto& iv = r.bound(gamma);
        s += iv.upper - iv.lower;
    }
    return s / static_cast<double>(records.size());
}

inline double winkler(const std::vector<EvalRecord>& records, double gamma) {
    detail::require_records(records);
    if (!(gamma > 0.0 && gamma < 1.0)) throw PreconditionError("Winkler score needs 0 < gamma < 1");
    const double alpha = 1.0 - gamma;
    double s = 0.0;
    for (const auto& r : records) {
        const auto& iv = r.bound(gamma);
        double w = iv.upper - iv.lower;
        if (r.actual < iv.lower) w += 2.0 / alpha * (iv.lower - r.actual);
        else if (r.actual > iv.upper) w += 2.0 / alpha * (r.actual - iv.upper);
        s += w;
    }
    return s / static_cast<double>(records.size());
}

struct LevelScores {
    double gamma, ace, piaw, winkler;
};

struct ReportRow {
    std::string name;
    std::size_t count = 0;
    double mape = 0.0;
    std::size_t mape_excluded = 0;
    std::vector<LevelScores> levels;
};

struct MetricReport {
    std::vector<ReportRow> rows;
    double mape_floor = 0.0;
    std::vector<std::string> warnings;

    const ReportRow& row(const std::string& name) const {
        for (const auto& r : rows)
            if (r.name == name) return r;
        throw PreconditionError("report has no row '" + name + "'");
    }
};

inline ReportRow score_rows(const std::string& name, const std::vector<EvalRecord>& records,
                            const std::vector<double>& gammas, double floor) {
    std::vector<double> a, p;
    for (const auto& r : records) {
        a.push_back(r.actual);
        p.push_back(r.point);
    }
    ReportRow row;
    row.name = name;
    row.count = records.size();
    const auto m = mape(a, p, floor);
    row.mape = m.percent;
    row.mape_excluded = m.excluded;
    for (double g : gammas) row.levels.push_back({g, ace(records, g), piaw(records, g), winkler(records, g)});
    return row;
}

/// Per-season rows (seasons without records are skipped) followed by "total".
inline MetricReport seasonal_report(const std::vector<EvalRecord>& records, const std::vector<double>& gammas,
                                    std::optional<double> mape_floor = std::nullopt) {
    detail::require_records(records);
    MetricReport rep;
    std::vector<double> actual;
    for (const auto& r : records) actual.push_back(r.actual);
    rep.mape_floor = mape_floor ? *mape_floor : default_mape_floor(actual);
    for (Season s : {Season::spring, Season::summer, Season::autumn, Season::winter}) {
        std::vector<EvalRecord> bucket;
        for (const auto& r : records)
            if (r.season == s) bucket.push_back(r);
        if (bucket.empty()) {
            rep.warnings.push_back(std::string("no records for ") + to_string(s) + ", row omitted");
            continue;
        }
        rep.rows.push_back(score_rows(to_string(s), bucket, gammas, rep.mape_floor));
    }
    rep.rows.push_back(score_rows("total", records, gammas, rep.mape_floor));
    return rep;
}

inline std::string report_csv(const MetricReport& rep) {
    std::string out = "season,count,mape";
    if (!rep.rows.empty())
        for (const auto& l : rep.rows.front().levels) {
            const auto tag = level_tag(l.gamma);
            out += ",ace_" + tag + ",piaw_" + tag + ",winkler_" + tag;
        }
    out += '\n';
    for (const auto& r : rep.rows) {
        out += r.name + "," + std::to_string(r.count) + "," + format_number(r.mape);
        for (const auto& l : r.levels)
            out += "," + format_number(l.ace) + "," + format_number(l.piaw) + "," + format_number(l.winkler);
        out += '\n';
    }
    return out;
}

inline nlohmann::json report_json(const MetricReport& rep) {
    nlohmann::json j;
    j["mape_floor"] = rep.mape_floor;
    j["warnings"] = rep.warnings;
    for (const auto& r : rep.rows) {
        nlohmann::json row{{"count", r.count}, {"mape", r.mape}, {"mape_excluded", r.mape_excluded}};
        for (const auto& l : r.levels)
            row["levels"].push_back({{"gamma", l.gamma}, {"ace", l.ace}, {"piaw", l.piaw}, {"winkler", l.winkler}});
        j["seasons"][r.name] = row;
    }
    return j;
}

} // namespace ecdm
