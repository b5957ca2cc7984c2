#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfkit/model.hpp"

namespace gfkit {

using json = nlohmann::json;

constexpr std::uint32_t kCheckpointFormatVersion = 1;
constexpr std::uint32_t kCacheFormatVersion = 1;

inline json model_config_to_json(const ModelConfig& cfg) {
    return json{{"layers", cfg.layers},
                {"dim", cfg.dim},
                {"heads", cfg.heads},
                {"max_tokens", cfg.max_tokens},
                {"max_neighbors", cfg.max_neighbors},
                {"vocab", cfg.vocab},
                {"share_gnn", cfg.share_gnn},
                {"relation_bias", cfg.relation_bias},
                {"mode", to_string(cfg.mode)}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.layers = j.at("layers").get<int>();
    cfg.dim = j.at("dim").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.max_tokens = j.at("max_tokens").get<int>();
    cfg.max_neighbors = j.at("max_neighbors").get<int>();
    cfg.vocab = j.at("vocab").get<int>();
    cfg.share_gnn = j.at("share_gnn").get<bool>();
    cfg.relation_bias = j.at("relation_bias").get<bool>();
    cfg.mode = encode_mode_from_string(j.at("mode").get<std::string>());
    cfg.validate();
    return cfg;
}

// Checkpoint layout: <dir>/manifest.json (config, tensor names/shapes) and
// <dir>/params.bin (concatenated tensor records in manifest order).
inline void save_checkpoint(const std::filesystem::path& dir, const ParamSet& params,
                            const ModelConfig& cfg) {
    std::filesystem::create_directories(dir);
    const auto named = params.named_tensors();

    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["config"] = model_config_to_json(cfg);
    manifest["param_count"] = params.param_count();
    manifest["version_hash"] = params.version_hash(cfg);
    json tensors = json::array();
    for (const auto& [name, t] : named) {
        json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        tensors.push_back(entry);
    }
    manifest["tensors"] = tensors;

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot write " + (dir / "manifest.json").string());
    mf << manifest.dump(2) << "\n";

    std::ofstream pf(dir / "params.bin", std::ios::binary);
    if (!pf) throw IoError("cannot write " + (dir / "params.bin").string());
    for (const auto& [name, t] : named) save_tensor(pf, t);
}

struct Checkpoint {
    ParamSet params;
    ModelConfig config;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("missing checkpoint manifest: " + (dir / "manifest.json").string());
    json manifest = json::parse(mf, nullptr, /*allow_exceptions=*/false);
    if (manifest.is_discarded()) throw IoError("malformed checkpoint manifest");
    if (manifest.at("format_version").get<std::uint32_t>() != kCheckpointFormatVersion)
        throw IoError("unsupported checkpoint format version");

    Checkpoint out;
    out.config = model_config_from_json(manifest.at("config"));

    // Structure the ParamSet from the config, then fill tensors in order.
    Rng scratch(0);
    bool with_pool = false;
    for (const auto& entry : manifest.at("tensors"))
        if (entry.at("name") == "pool.w") with_pool = true;
    out.params = init_params(out.config, scratch,
                             with_pool ? Aggregator::kMax : Aggregator::kNested);

    auto named = out.params.named_tensors();
    if (named.size() != manifest.at("tensors").size())
        throw IoError("checkpoint tensor list does not match config");

    std::ifstream pf(dir / "params.bin", std::ios::binary);
    if (!pf) throw IoError("missing checkpoint payload: " + (dir / "params.bin").string());
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& entry = manifest.at("tensors").at(i);
        if (entry.at("name").get<std::string>() != named[i].first)
            throw IoError("checkpoint tensor order mismatch at " + named[i].first);
        Tensor loaded = load_tensor<double>(pf);
        if (loaded.shape() != named[i].second.shape())
            throw IoError("checkpoint shape mismatch at " + named[i].first);
        std::memcpy(named[i].second.data(), loaded.data(), loaded.numel() * sizeof(double));
    }
    return out;
}

// Neighbor cache persistence: small header, then append-only records of
// (node-id u64, version-hash u64, (L-1) x d doubles).
inline void save_neighbor_cache(const std::filesystem::path& path, const NeighborCache& cache,
                                const ModelConfig& cfg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write cache file " + path.string());
    f.write("GFKC", 4);
    detail::write_u32(f, kCacheFormatVersion);
    detail::write_u32(f, static_cast<std::uint32_t>(cfg.layers - 1));
    detail::write_u32(f, static_cast<std::uint32_t>(cfg.dim));
    cache.for_each([&](std::uint64_t node, std::uint64_t version,
                       const std::vector<std::vector<double>>& values) {
        detail::write_u64(f, node);
        detail::write_u64(f, version);
        for (const auto& layer : values)
            for (double v : layer) detail::write_f64(f, v);
    });
    if (!f) throw IoError("cache write failed for " + path.string());
}

inline NeighborCache load_neighbor_cache(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open cache file " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "GFKC", 4) != 0)
        throw IoError("bad cache magic in " + path.string());
    if (detail::read_u32(f) != kCacheFormatVersion) throw IoError("unsupported cache version");
    const std::uint32_t n_layers = detail::read_u32(f);
    const std::uint32_t dim = detail::read_u32(f);
    NeighborCache cache;
    while (true) {
        f.peek();
        if (f.eof()) break;
        const std::uint64_t node = detail::read_u64(f);
        const std::uint64_t version = detail::read_u64(f);
        std::vector<std::vector<double>> values(n_layers, std::vector<double>(dim));
        for (auto& layer : values)
            for (auto& v : layer) v = detail::read_f64(f);
        cache.insert(node, version, std::move(values));
    }
    return cache;
}

}  // namespace gfkit
