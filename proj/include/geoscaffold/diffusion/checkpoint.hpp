// Copyright Contributors to the GeoScaffold Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <geoscaffold/diffusion/dit.hpp>
#include <geoscaffold/pointmap_io.hpp>

#include <json.hpp>

#include <cstring>
#include <filesystem>

namespace geoscaffold::diffusion {

/// Layout: "GSDT", u32 version, u64 header length, JSON header, then float32 tensors in header
/// order, little-endian.
inline constexpr std::array<char, 4> kCheckpointMagic = {'G', 'S', 'D', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const DiTConfig &c) {
    return {{"num_layers", c.num_layers},         {"hidden_dim", c.hidden_dim},
            {"num_heads", c.num_heads},           {"patch_size", c.patch_size},
            {"encoder_layers", c.encoder_layers}, {"mlp_dim", c.mlp_dim},
            {"time_embed_dim", c.time_embed_dim}, {"latent_channels", c.latent_channels},
            {"frames", c.frames},                 {"latent_height", c.latent_height},
            {"latent_width", c.latent_width}};
}

inline DiTConfig config_from_json(const nlohmann::json &j) {
    DiTConfig c;
    auto get = [&j](const char *key, int &field) {
        if (j.contains(key)) {
            if (!j[key].is_number_integer()) {
                throw Error(ErrorCode::SchemaViolation, "expected an integer", key);
            }
            field = j[key].get<int>();
        }
    };
    get("num_layers", c.num_layers);
    get("hidden_dim", c.hidden_dim);
    get("num_heads", c.num_heads);
    get("patch_size", c.patch_size);
    get("encoder_layers", c.encoder_layers);
    get("mlp_dim", c.mlp_dim);
    get("time_embed_dim", c.time_embed_dim);
    get("latent_channels", c.latent_channels);
    get("frames", c.frames);
    get("latent_height", c.latent_height);
    get("latent_width", c.latent_width);
    c.validate();
    return c;
}

inline std::vector<char> encode_checkpoint(const DiT &model) {
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto &p : model.parameters().all()) {
        tensors.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()},
                           {"offset", offset}});
        offset += std::size_t(p.value.size()) * 4;
    }
    const std::string header =
        nlohmann::json{{"config", config_to_json(model.config())}, {"tensors", tensors}}.dump();
    std::vector<char> out;
    out.insert(out.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
    geoscaffold::detail::append_raw(out, &kCheckpointVersion, 1);
    const std::uint64_t len = header.size();
    geoscaffold::detail::append_raw(out, &len, 1);
    out.insert(out.end(), header.begin(), header.end());
    for (const auto &p : model.parameters().all()) {
        std::vector<float> f(std::size_t(p.value.size()));
        for (std::size_t i = 0; i < f.size(); ++i) {
            f[i] = float(p.value.data()[i]);
        }
        geoscaffold::detail::append_raw(out, f.data(), f.size());
    }
    return out;
}

inline DiT decode_checkpoint(std::span<const char> bytes) {
    if (bytes.size() < 16 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.data())) {
        throw Error(ErrorCode::BadMagic, "not a model checkpoint");
    }
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&len, bytes.data() + 8, 8);
    if (version != kCheckpointVersion) {
        throw Error(ErrorCode::SchemaViolation, "unsupported checkpoint version", "version");
    }
    if (bytes.size() < 16 + len) {
        throw Error(ErrorCode::TruncatedFile, "checkpoint header truncated");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(len));
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::SchemaViolation, std::string("bad checkpoint header: ") + e.what());
    }
    DiT model(config_from_json(header.at("config")));
    const std::size_t base = 16 + len;
    auto &store = model.parameters();
    for (const auto &t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        std::size_t id = store.size();
        for (std::size_t i = 0; i < store.size(); ++i) {
            if (store[i].name == name) {
                id = i;
            }
        }
        if (id == store.size()) {
            throw Error(ErrorCode::SchemaViolation, "unknown tensor '" + name + "'", "tensors");
        }
        Mat &value = store[id].value;
        if (t.at("rows").get<Eigen::Index>() != value.rows() || t.at("cols").get<Eigen::Index>() != value.cols()) {
            throw Error(ErrorCode::DimensionMismatch, "tensor '" + name + "' has the wrong shape");
        }
        const std::size_t off = base + t.at("offset").get<std::size_t>();
        const std::size_t n = std::size_t(value.size());
        if (bytes.size() < off + 4 * n) {
            throw Error(ErrorCode::TruncatedFile, "tensor '" + name + "' truncated");
        }
        std::vector<float> f(n);
        std::memcpy(f.data(), bytes.data() + off, 4 * n);
        for (std::size_t i = 0; i < n; ++i) {
            value.data()[i] = f[i];
        }
    }
    return model;
}

inline void save_checkpoint(const DiT &model, const std::filesystem::path &path) {
    geoscaffold::detail::write_file(path, encode_checkpoint(model));
}

inline DiT load_checkpoint(const std::filesystem::path &path) {
    return decode_checkpoint(geoscaffold::detail::read_file(path));
}

} // namespace geoscaffold::diffusion
