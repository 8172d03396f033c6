#pragma once

// Checkpoint container:
//   "MILLCKPT" | u32 version | u64 header bytes | JSON header | f64 payload
// The header echoes the model config and names every parameter tensor; the
// payload is the parameter vector followed by the optional optimizer moments,
// all little-endian doubles.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mill/model.hpp"

namespace mill::ckpt {

inline constexpr char kMagic[8] = {'M', 'I', 'L', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline nlohmann::json to_json(const model::ModelConfig& c) {
    return {{"base_channels", c.base_channels},
            {"latent_channels", c.latent_channels},
            {"depth", c.depth},
            {"attention", c.attention}};
}

inline model::ModelConfig model_config_from_json(const nlohmann::json& j) {
    model::ModelConfig c;
    c.base_channels = j.at("base_channels").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.depth = j.at("depth").get<int>();
    c.attention = j.at("attention").get<bool>();
    c.validate();
    return c;
}

struct Checkpoint {
    model::ModelConfig config;
    std::vector<double> params;
    std::vector<double> adam_m, adam_v;  // empty when no optimizer state is stored
    nlohmann::json meta = nlohmann::json::object();
};

inline void save(const std::filesystem::path& path, const Checkpoint& ck) {
    const model::Layout layout(ck.config);
    if (ck.params.size() != layout.size())
        throw std::invalid_argument("checkpoint: parameter count does not match config");
    if (ck.adam_m.size() != ck.adam_v.size() || (!ck.adam_m.empty() && ck.adam_m.size() != ck.params.size()))
        throw std::invalid_argument("checkpoint: optimizer state size mismatch");

    nlohmann::ordered_json header;
    header["format"] = "mill-checkpoint";
    header["model_config"] = to_json(ck.config);
    header["param_count"] = ck.params.size();
    header["has_optimizer"] = !ck.adam_m.empty();
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (const auto& t : layout.tensors())
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
    header["tensors"] = tensors;
    header["meta"] = ck.meta;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
    const std::uint64_t header_size = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&header_size), sizeof header_size);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto dump = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    dump(ck.params);
    dump(ck.adam_m);
    dump(ck.adam_v);
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

/// Loads a checkpoint; when `expected` is given, a differing config is rejected.
inline Checkpoint load(const std::filesystem::path& path, const model::ModelConfig* expected = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot read " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t header_size = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&header_size), sizeof header_size);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw std::runtime_error("checkpoint: " + path.string() + " is not a mill checkpoint");
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    if (header_size > (1u << 26)) throw std::runtime_error("checkpoint: header too large");
    std::string text(header_size, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_size));
    const auto header = nlohmann::json::parse(text);

    Checkpoint ck;
    ck.config = model_config_from_json(header.at("model_config"));
    if (expected && !(*expected == ck.config))
        throw std::invalid_argument("checkpoint: model config mismatch (stored " + header.at("model_config").dump() +
                                    ", expected " + to_json(*expected).dump() + ")");
    const std::size_t n = header.at("param_count").get<std::size_t>();
    if (n != model::parameter_count(ck.config))
        throw std::runtime_error("checkpoint: parameter count disagrees with config");
    const auto read = [&](std::vector<double>& v) {
        v.resize(n);
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated payload in " + path.string());
    };
    read(ck.params);
    if (header.at("has_optimizer").get<bool>()) {
        read(ck.adam_m);
        read(ck.adam_v);
    }
    ck.meta = header.value("meta", nlohmann::json::object());
    return ck;
}

template <class T>
std::vector<double> widen(const std::vector<T>& v) {
    return {v.begin(), v.end()};
}

template <class T>
std::vector<T> narrow(const std::vector<double>& v) {
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
    return out;
}

template <class T>
model::Model<T> load_model(const std::filesystem::path& path, const model::ModelConfig* expected = nullptr) {
    const Checkpoint ck = load(path, expected);
    model::Model<T> m(ck.config);
    m.params() = narrow<T>(ck.params);
    return m;
}

}  // namespace mill::ckpt
