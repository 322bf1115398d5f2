#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ecdm/error.hpp"
#include "ecdm/series.hpp"

namespace ecdm {

struct ChannelStats {
    double mean = 0.0;
    double std = 1.0;

    double normalize(double x) const { return (x - mean) / std; }
    double denormalize(double z) const { return z * std + mean; }
};

/// Z-score statistics, keyed by channel name. `res` (pv + wind) is derived when both exist.
struct NormStats {
    std::map<std::string, ChannelStats> channels;
    std::string fitted_on;

    const ChannelStats& at(const std::string& name) const {
        const auto it = channels.find(name);
        if (it == channels.end()) throw PreconditionError("no normalization stats for channel '" + name + "'");
        return it->second;
    }

    std::vector<double> normalize(const std::string& name, std::span<const double> xs) const {
        const auto& s = at(name);
        std::vector<double> out(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = s.normalize(xs[i]);
        return out;
    }

    std::vector<double> denormalize(const std::string& name, std::span<const double> zs) const {
        const auto& s = at(name);
        std::vector<double> out(zs.size());
        for (std::size_t i = 0; i < zs.size(); ++i) out[i] = s.denormalize(zs[i]);
        return out;
    }
};

inline const std::string kResChannel = "res";

/// Mean and population standard deviation.
inline ChannelStats channel_stats(std::span<const double> xs, const std::string& name) {
    if (xs.empty()) throw PreconditionError("empty normalization split");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    if (!(var > 0.0)) throw PreconditionError("zero variance in channel '" + name + "'");
    return {mean, std::sqrt(var)};
}

/// Fits stats over `split` only.
inline NormStats fit_norm(const SeriesFrame& frame, IndexRange split) {
    if (split.size() == 0 || split.end > frame.size()) throw PreconditionError("normalization split is empty or out of range");
    NormStats stats;
    stats.fitted_on = format_timestamp(frame.time_at(split.begin)) + "/" + format_timestamp(frame.time_at(split.end - 1));
    for (const auto& ch : frame.channels) {
        std::span<const double> xs(ch.values.data() + split.begin, split.size());
        stats.channels[ch.name] = channel_stats(xs, ch.name);
    }
    const Channel* pv = frame.find(ChannelRole::pv);
    const Channel* wind = frame.find(ChannelRole::wind);
    if (pv && wind && !frame.find(kResChannel)) {
        std::vector<double> res(split.size());
        for (std::size_t i = 0; i < res.size(); ++i) res[i] = pv->values[split.begin + i] + wind->values[split.begin + i];
        stats.channels[kResChannel] = channel_stats(res, kResChannel);
    }
    return stats;
}

} // namespace ecdm
