#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sftgo/engine/tiny_lm.hpp"

namespace sftgo::engine {

// Checkpoint container: magic, format version, scalar width, architecture
// JSON, then named raw tensors. Round-trips are bit-exact by construction.
namespace ckpt_detail {

constexpr char kMagic[8] = {'S', 'F', 'T', 'G', 'O', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint: unexpected end of file");
    return v;
}

inline nlohmann::ordered_json config_json(const TinyLMConfig& cfg) {
    nlohmann::ordered_json j;
    j["vocab_size"] = cfg.vocab_size;
    j["d_model"] = cfg.d_model;
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["max_seq_len"] = cfg.max_seq_len;
    j["seed"] = cfg.seed;
    return j;
}

inline TinyLMConfig config_from_json(const nlohmann::json& j) {
    TinyLMConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    return cfg;
}

} // namespace ckpt_detail

template <typename Scalar>
void save_checkpoint(const ParamSet<Scalar>& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));
    ckpt_detail::write_pod(out, ckpt_detail::kVersion);
    ckpt_detail::write_pod(out, static_cast<uint8_t>(sizeof(Scalar)));

    std::string cfg = ckpt_detail::config_json(params.config).dump();
    ckpt_detail::write_pod(out, static_cast<uint64_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    ckpt_detail::write_pod(out, static_cast<uint64_t>(params.entries().size()));
    for (const auto& e : params.entries()) {
        ckpt_detail::write_pod(out, static_cast<uint64_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        ckpt_detail::write_pod(out, static_cast<uint64_t>(e.value.rows()));
        ckpt_detail::write_pod(out, static_cast<uint64_t>(e.value.cols()));
        out.write(reinterpret_cast<const char*>(e.value.data()),
                  static_cast<std::streamsize>(sizeof(Scalar) * static_cast<size_t>(e.value.size())));
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

template <typename Scalar>
ParamSet<Scalar> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, ckpt_detail::kMagic, sizeof(magic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    uint32_t version = ckpt_detail::read_pod<uint32_t>(in);
    if (version != ckpt_detail::kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    uint8_t scalar_bytes = ckpt_detail::read_pod<uint8_t>(in);
    if (scalar_bytes != sizeof(Scalar))
        throw ConfigError("checkpoint precision mismatch: file has " + std::to_string(scalar_bytes) +
                          "-byte scalars, expected " + std::to_string(sizeof(Scalar)));

    uint64_t cfg_len = ckpt_detail::read_pod<uint64_t>(in);
    std::string cfg_str(cfg_len, '\0');
    in.read(cfg_str.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw DataError("checkpoint: truncated config block");
    nlohmann::json cfg_json = nlohmann::json::parse(cfg_str, nullptr, false);
    if (cfg_json.is_discarded()) throw DataError("checkpoint: malformed config block");

    ParamSet<Scalar> params;
    params.config = ckpt_detail::config_from_json(cfg_json);
    uint64_t n_tensors = ckpt_detail::read_pod<uint64_t>(in);
    for (uint64_t i = 0; i < n_tensors; ++i) {
        uint64_t name_len = ckpt_detail::read_pod<uint64_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        uint64_t rows = ckpt_detail::read_pod<uint64_t>(in);
        uint64_t cols = ckpt_detail::read_pod<uint64_t>(in);
        Mat<Scalar> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(Scalar) * rows * cols));
        if (!in) throw DataError("checkpoint: truncated tensor " + name);
        params.add(name, std::move(m));
    }
    return params;
}

} // namespace sftgo::engine
