#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "ecdm/error.hpp"
#include "ecdm/io.hpp"
#include "ecdm/predictor.hpp"

namespace ecdm {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"depth", c.depth},
                       {"heads", c.heads},
                       {"base_channels", c.base_channels},
                       {"time_embed_dim", c.time_embed_dim},
                       {"conditional", c.conditional},
                       {"d_feat", c.d_feat},
                       {"in_channels", c.in_channels},
                       {"window_length", c.window_length},
                       {"points_per_day", c.points_per_day},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
    c.conditional = j.value("conditional", c.conditional);
    c.d_feat = j.value("d_feat", c.d_feat);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.window_length = j.value("window_length", c.window_length);
    c.points_per_day = j.value("points_per_day", c.points_per_day);
    c.seed = j.value("seed", c.seed);
}

inline void to_json(nlohmann::json& j, const ScheduleFingerprint& f) {
    j = nlohmann::json{{"kind", "linear"}, {"steps", f.steps}, {"beta_start", f.beta_start}, {"beta_end", f.beta_end}};
}

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { buf_.append(s); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, std::string path) : data_(data), path_(std::move(path)) {}

    std::uint64_t uint(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t{static_cast<unsigned char>(data_[pos_ + i])} << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() { return std::string(bytes(u32())); }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw IoError("truncated checkpoint: " + path_);
    }
    std::string_view data_;
    std::string path_;
    std::size_t pos_ = 0;
};

inline constexpr std::string_view kMagic = "ECDMCKPT";
inline constexpr std::uint32_t kVersion = 1;

inline std::uint32_t crc(std::string_view s) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

} // namespace detail

inline std::string serialize_checkpoint(const NoiseModel& model) {
    detail::ByteWriter w;
    w.bytes(detail::kMagic);
    w.u32(detail::kVersion);
    w.str(nlohmann::json(model.config()).dump());
    const auto& fp = model.schedule();
    w.u32(static_cast<std::uint32_t>(fp.kind));
    w.u32(static_cast<std::uint32_t>(fp.steps));
    w.f64(fp.beta_start);
    w.f64(fp.beta_end);
    const auto& params = model.params().all();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.shape.size()));
        for (auto d : p.shape) w.u64(d);
        for (float v : p.value) w.f32(v);
    }
    const std::uint32_t sum = detail::crc(w.buffer());
    w.u32(sum);
    return std::move(w.buffer());
}

inline NoiseModel deserialize_checkpoint(std::string_view data, const std::string& path = "<memory>") {
    if (data.size() < detail::kMagic.size() + 4 || data.substr(0, detail::kMagic.size()) != detail::kMagic)
        throw IoError("not a checkpoint file: " + path);
    const std::string_view body = data.substr(0, data.size() - 4);
    detail::ByteReader tail(data.substr(data.size() - 4), path);
    if (tail.u32() != detail::crc(body)) throw IoError("checkpoint checksum mismatch: " + path);

    detail::ByteReader r(body, path);
    r.bytes(detail::kMagic.size());
    if (const auto v = r.u32(); v != detail::kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(v) + ": " + path);
    ModelConfig cfg;
    try {
        cfg = nlohmann::json::parse(r.str()).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint config block in " + path + ": " + e.what());
    }
    ScheduleFingerprint fp;
    if (r.u32() != static_cast<std::uint32_t>(ScheduleKind::linear)) throw IoError("unknown schedule kind: " + path);
    fp.steps = static_cast<int>(r.u32());
    fp.beta_start = r.f64();
    fp.beta_end = r.f64();

    NoiseModel model(cfg, fp);
    auto& params = model.params().all();
    if (r.u32() != params.size()) throw IoError("checkpoint parameter count does not match its config: " + path);
    for (auto& p : params) {
        if (r.str() != p.name) throw IoError("checkpoint parameter order mismatch at '" + p.name + "': " + path);
        const std::uint32_t nd = r.u32();
        std::vector<std::size_t> shape(nd);
        for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
        if (shape != p.shape) throw IoError("checkpoint shape mismatch for '" + p.name + "': " + path);
        for (auto& v : p.value) v = r.f32();
    }
    if (!r.done()) throw IoError("trailing bytes in checkpoint: " + path);
    return model;
}

inline void save_checkpoint(const NoiseModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(model));
}

inline NoiseModel load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file(path), path.string());
}

} // namespace ecdm
