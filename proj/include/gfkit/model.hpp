#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gfkit/layers.hpp"
#include "gfkit/rng.hpp"
#include "gfkit/tensor.hpp"

namespace gfkit {

// Reserved vocabulary ids shared across the whole pipeline.
constexpr std::int32_t kPadTokenId = 0;
constexpr std::int32_t kClsTokenId = 1;
constexpr std::int32_t kMaskTokenId = 2;
constexpr std::int32_t kUnkTokenId = 3;

enum class EncodeMode { kBidirectional, kUnidirectional };

// How an encoding instance is turned into one embedding. kNested is the
// GNN-in-the-loop path; the rest are cascaded baselines over independently
// encoded nodes (kNone = center text only).
enum class Aggregator { kNested, kNone, kMax, kMean, kAtt, kGat };

inline std::string to_string(EncodeMode mode) {
    return mode == EncodeMode::kBidirectional ? "bidirectional" : "unidirectional";
}

inline std::string to_string(Aggregator agg) {
    switch (agg) {
        case Aggregator::kNested: return "nested";
        case Aggregator::kNone: return "none";
        case Aggregator::kMax: return "max";
        case Aggregator::kMean: return "mean";
        case Aggregator::kAtt: return "att";
        case Aggregator::kGat: return "gat";
    }
    return "?";
}

inline EncodeMode encode_mode_from_string(const std::string& s) {
    if (s == "bidirectional") return EncodeMode::kBidirectional;
    if (s == "unidirectional") return EncodeMode::kUnidirectional;
    throw ConfigError("unknown mode '" + s + "' (expected bidirectional|unidirectional)");
}

inline Aggregator aggregator_from_string(const std::string& s) {
    if (s == "nested") return Aggregator::kNested;
    if (s == "none") return Aggregator::kNone;
    if (s == "max") return Aggregator::kMax;
    if (s == "mean") return Aggregator::kMean;
    if (s == "att") return Aggregator::kAtt;
    if (s == "gat") return Aggregator::kGat;
    throw ConfigError("unknown aggregator '" + s + "' (expected nested|none|max|mean|att|gat)");
}

struct ModelConfig {
    int layers = 2;         // L, TRM0 plus at least one nested step
    int dim = 32;           // d
    int heads = 2;          // h
    int max_tokens = 16;    // P, includes the leading [CLS]
    int max_neighbors = 5;  // K
    int vocab = 1000;       // V
    bool share_gnn = true;
    bool relation_bias = true;
    EncodeMode mode = EncodeMode::kUnidirectional;

    void validate() const {
        if (layers < 2) throw ConfigError("model.layers must be >= 2");
        if (dim < 1 || heads < 1 || dim % heads != 0)
            throw ConfigError("model.dim must be a positive multiple of model.heads");
        if (max_tokens < 1) throw ConfigError("model.max_tokens must be >= 1");
        if (max_neighbors < 0) throw ConfigError("model.max_neighbors must be >= 0");
        if (vocab <= kUnkTokenId) throw ConfigError("model.vocab must cover the reserved ids");
    }

    int gnn_sets() const { return share_gnn ? 1 : layers - 1; }
};

struct PoolHead {
    Tensor w;  // [2d x d]
    Tensor b;  // [d]
    bool defined() const { return w.defined(); }
};

// All learnable state. Copies share tensor storage; clone() is a deep copy.
struct ParamSet {
    EmbeddingTable embed;
    std::vector<TransformerLayerWeights> layers;
    std::vector<MhaWeights> gnn;
    std::vector<RelationBias> gnn_bias;
    PoolHead pool;

    // Bumped by the optimizer so the cache version hash can be memoized.
    std::uint64_t revision = 0;

    std::vector<std::pair<std::string, Tensor>> named_tensors() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("embed.word", embed.word);
        out.emplace_back("embed.pos", embed.pos);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            const auto& lw = layers[l];
            for (int j = 0; j < lw.attn.heads(); ++j) {
                const std::string h = std::to_string(j);
                out.emplace_back(p + "attn.q" + h, lw.attn.wq[j]);
                out.emplace_back(p + "attn.k" + h, lw.attn.wk[j]);
                out.emplace_back(p + "attn.v" + h, lw.attn.wv[j]);
            }
            out.emplace_back(p + "attn.out", lw.attn.wo);
            out.emplace_back(p + "mlp.w1", lw.mlp_w1);
            out.emplace_back(p + "mlp.b1", lw.mlp_b1);
            out.emplace_back(p + "mlp.w2", lw.mlp_w2);
            out.emplace_back(p + "mlp.b2", lw.mlp_b2);
            out.emplace_back(p + "ln1.gamma", lw.ln1.gamma);
            out.emplace_back(p + "ln1.beta", lw.ln1.beta);
            out.emplace_back(p + "ln2.gamma", lw.ln2.gamma);
            out.emplace_back(p + "ln2.beta", lw.ln2.beta);
        }
        for (std::size_t g = 0; g < gnn.size(); ++g) {
            const std::string p = "gnn" + std::to_string(g) + ".";
            for (int j = 0; j < gnn[g].heads(); ++j) {
                const std::string h = std::to_string(j);
                out.emplace_back(p + "q" + h, gnn[g].wq[j]);
                out.emplace_back(p + "k" + h, gnn[g].wk[j]);
                out.emplace_back(p + "v" + h, gnn[g].wv[j]);
            }
            out.emplace_back(p + "bias", gnn_bias[g].table);
        }
        if (pool.defined()) {
            out.emplace_back("pool.w", pool.w);
            out.emplace_back("pool.b", pool.b);
        }
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_tensors()) n += t.numel();
        return n;
    }

    std::uint64_t version_hash(const ModelConfig& cfg) const {
        if (hash_revision_ != revision) {
            std::uint64_t h = 0xcbf29ce484222325ull;
            const std::int64_t core[] = {cfg.layers, cfg.dim, cfg.heads, cfg.max_tokens,
                                         cfg.share_gnn ? 1 : 0, cfg.relation_bias ? 1 : 0};
            h = fnv1a(core, sizeof(core), h);
            for (const auto& [name, t] : named_tensors()) {
                h = fnv1a_str(name, h);
                h = fnv1a(t.data(), t.numel() * sizeof(double), h);
            }
            cached_hash_ = h;
            hash_revision_ = revision;
        }
        return cached_hash_;
    }

    void bump_revision() { ++revision; }

    ParamSet clone() const {
        ParamSet out;
        auto copy = [](const Tensor& t) {
            if (!t.defined()) return Tensor();
            std::vector<double> v(t.data(), t.data() + t.numel());
            return Tensor::from_data(t.shape(), v, t.requires_grad());
        };
        out.embed = {copy(embed.word), copy(embed.pos)};
        for (const auto& lw : layers) {
            TransformerLayerWeights w;
            for (const auto& t : lw.attn.wq) w.attn.wq.push_back(copy(t));
            for (const auto& t : lw.attn.wk) w.attn.wk.push_back(copy(t));
            for (const auto& t : lw.attn.wv) w.attn.wv.push_back(copy(t));
            w.attn.wo = copy(lw.attn.wo);
            w.mlp_w1 = copy(lw.mlp_w1);
            w.mlp_b1 = copy(lw.mlp_b1);
            w.mlp_w2 = copy(lw.mlp_w2);
            w.mlp_b2 = copy(lw.mlp_b2);
            w.ln1 = {copy(lw.ln1.gamma), copy(lw.ln1.beta)};
            w.ln2 = {copy(lw.ln2.gamma), copy(lw.ln2.beta)};
            out.layers.push_back(std::move(w));
        }
        for (const auto& g : gnn) {
            MhaWeights w;
            for (const auto& t : g.wq) w.wq.push_back(copy(t));
            for (const auto& t : g.wk) w.wk.push_back(copy(t));
            for (const auto& t : g.wv) w.wv.push_back(copy(t));
            out.gnn.push_back(std::move(w));
        }
        for (const auto& b : gnn_bias) out.gnn_bias.push_back(RelationBias{copy(b.table)});
        out.pool = {copy(pool.w), copy(pool.b)};
        out.revision = revision;
        return out;
    }

private:
    mutable std::uint64_t cached_hash_ = 0;
    mutable std::uint64_t hash_revision_ = ~std::uint64_t{0};
};

// Closed-form parameter count; guards wiring bugs in init and checkpoints.
inline std::size_t param_count_formula(const ModelConfig& cfg, bool with_pool_head) {
    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    const std::size_t per_layer = 4 * d * d            // q,k,v + output projection
                                  + (d * 4 * d + 4 * d) + (4 * d * d + d)  // mlp
                                  + 4 * d;             // two LayerNorm pairs
    const std::size_t per_gnn = 3 * d * d + 3 * static_cast<std::size_t>(cfg.heads);
    std::size_t n = static_cast<std::size_t>(cfg.vocab) * d +
                    static_cast<std::size_t>(cfg.max_tokens) * d +
                    static_cast<std::size_t>(cfg.layers) * per_layer +
                    static_cast<std::size_t>(cfg.gnn_sets()) * per_gnn;
    if (with_pool_head) n += 2 * d * d + d;
    return n;
}

namespace detail {

inline Tensor init_matrix(Shape shape, Rng& rng, double sigma = 0.02) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.truncated_normal(sigma);
    return Tensor::from_data(std::move(shape), v, /*requires_grad=*/true);
}

inline MhaWeights init_mha(int d, int heads, bool with_wo, Rng& rng) {
    MhaWeights w;
    const std::size_t dd = static_cast<std::size_t>(d);
    const std::size_t dh = dd / static_cast<std::size_t>(heads);
    for (int j = 0; j < heads; ++j) {
        w.wq.push_back(init_matrix({dd, dh}, rng));
        w.wk.push_back(init_matrix({dd, dh}, rng));
        w.wv.push_back(init_matrix({dd, dh}, rng));
    }
    if (with_wo) w.wo = init_matrix({dd, dd}, rng);
    return w;
}

}  // namespace detail

// Truncated-normal init (sigma 0.02) for projections and embeddings,
// ones/zeros for LayerNorm, zeros for relation biases. Draw order follows
// named_tensors order.
inline ParamSet init_params(const ModelConfig& cfg, Rng& rng,
                            Aggregator aggregator = Aggregator::kNested) {
    cfg.validate();
    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    ParamSet params;
    params.embed.word = detail::init_matrix({static_cast<std::size_t>(cfg.vocab), d}, rng);
    params.embed.pos = detail::init_matrix({static_cast<std::size_t>(cfg.max_tokens), d}, rng);
    for (int l = 0; l < cfg.layers; ++l) {
        TransformerLayerWeights w;
        w.attn = detail::init_mha(cfg.dim, cfg.heads, /*with_wo=*/true, rng);
        w.mlp_w1 = detail::init_matrix({d, 4 * d}, rng);
        w.mlp_b1 = Tensor::zeros({4 * d}, true);
        w.mlp_w2 = detail::init_matrix({4 * d, d}, rng);
        w.mlp_b2 = Tensor::zeros({d}, true);
        w.ln1 = {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
        w.ln2 = {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
        params.layers.push_back(std::move(w));
    }
    for (int g = 0; g < cfg.gnn_sets(); ++g) {
        params.gnn.push_back(detail::init_mha(cfg.dim, cfg.heads, /*with_wo=*/false, rng));
        params.gnn_bias.push_back(
            RelationBias{Tensor::zeros({static_cast<std::size_t>(cfg.heads), 3}, true)});
    }
    if (aggregator == Aggregator::kMax || aggregator == Aggregator::kMean ||
        aggregator == Aggregator::kAtt) {
        // identity-blend warm start: output = center + 0.5 * pooled
        std::vector<double> w(2 * d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            w[i * d + i] = 1.0;
            w[(d + i) * d + i] = 0.5;
        }
        params.pool.w = Tensor::from_data({2 * d, d}, w, /*requires_grad=*/true);
        params.pool.b = Tensor::zeros({d}, true);
    }
    return params;
}

// One encoding instance: the center node and up to K neighbours, token ids
// with the leading [CLS]. node_ids (center first) are optional and only
// needed for cache lookups.
struct GraphInput {
    std::vector<std::int32_t> center;
    std::vector<std::vector<std::int32_t>> neighbors;
    std::vector<std::uint64_t> node_ids;

    std::size_t node_count() const { return 1 + neighbors.size(); }
};

namespace detail {

inline void validate_sequence(const std::vector<std::int32_t>& tokens, const ModelConfig& cfg) {
    if (tokens.empty()) throw ContractError("graph input: empty token sequence");
    if (tokens[0] != kClsTokenId)
        throw ContractError("graph input: sequence must start with [CLS]");
    if (tokens.size() > static_cast<std::size_t>(cfg.max_tokens))
        throw RangeError("graph input: sequence longer than max_tokens");
}

inline std::pair<std::vector<std::int32_t>, Mask> pad_tokens(
    const std::vector<std::int32_t>& tokens, std::size_t p) {
    std::vector<std::int32_t> ids(p, kPadTokenId);
    Mask mask(p, 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        ids[i] = tokens[i];
        mask[i] = 1;
    }
    return {std::move(ids), std::move(mask)};
}

}  // namespace detail

inline void validate_graph_input(const GraphInput& input, const ModelConfig& cfg) {
    if (input.node_count() - 1 > static_cast<std::size_t>(cfg.max_neighbors))
        throw RangeError("graph input: " + std::to_string(input.node_count() - 1) +
                         " neighbours exceed capacity K=" + std::to_string(cfg.max_neighbors));
    detail::validate_sequence(input.center, cfg);
    for (const auto& n : input.neighbors) detail::validate_sequence(n, cfg);
    if (!input.node_ids.empty() && input.node_ids.size() != input.node_count())
        throw ContractError("graph input: node_ids must cover every node");
}

// Node-level embeddings of a messenger-free transformer stack.
struct PlainStack {
    std::vector<Tensor> z_mid;  // z^1 .. z^{L-1}
    Tensor z_final;             // z^L
};

inline PlainStack encode_plain_stack(const std::vector<std::int32_t>& tokens,
                                     const ParamSet& params, const ModelConfig& cfg) {
    detail::validate_sequence(tokens, cfg);
    auto [ids, mask] = detail::pad_tokens(tokens, static_cast<std::size_t>(cfg.max_tokens));
    Tensor h = token_embed(ids, params.embed);
    PlainStack out;
    for (int l = 0; l < cfg.layers; ++l) {
        h = transformer_layer(h, std::nullopt, params.layers[l], mask);
        Tensor z = take_row(h, 0);
        if (l + 1 < cfg.layers)
            out.z_mid.push_back(std::move(z));
        else
            out.z_final = std::move(z);
    }
    return out;
}

// Cache of per-node mid-stack embeddings keyed by (node id, parameter
// version). Entries are exactly what encode_plain_stack produces for the
// node under that version.
class NeighborCache {
public:
    struct Stats {
        std::uint64_t hits = 0;
        std::uint64_t misses = 0;
    };

    const std::vector<std::vector<double>>& lookup_or_encode(std::uint64_t node_id,
                                                             const std::vector<std::int32_t>& tokens,
                                                             const ParamSet& params,
                                                             const ModelConfig& cfg) {
        const std::uint64_t version = params.version_hash(cfg);
        if (pinned_version_ && *pinned_version_ != version)
            throw StaleCacheError("neighbor cache is pinned to a different parameter version");
        const Key key{node_id, version};
        auto it = map_.find(key);
        if (it != map_.end()) {
            ++stats_.hits;
            return it->second;
        }
        ++stats_.misses;
        NoGradGuard ng;
        PlainStack st = encode_plain_stack(tokens, params, cfg);
        std::vector<std::vector<double>> values;
        values.reserve(st.z_mid.size());
        for (const auto& z : st.z_mid)
            values.emplace_back(z.data(), z.data() + z.numel());
        auto [pos, inserted] = map_.insert_or_assign(key, std::move(values));
        (void)inserted;
        return pos->second;
    }

    bool contains(std::uint64_t node_id, std::uint64_t version) const {
        return map_.count(Key{node_id, version}) > 0;
    }

    void insert(std::uint64_t node_id, std::uint64_t version,
                std::vector<std::vector<double>> values) {
        map_.insert_or_assign(Key{node_id, version}, std::move(values));
    }

    // Pinning makes any use under a different parameter version an error
    // instead of a silent recompute (for caches loaded from storage).
    void pin_version(std::uint64_t version) { pinned_version_ = version; }

    const Stats& stats() const { return stats_; }
    std::size_t size() const { return map_.size(); }
    void clear() { map_.clear(); }

    template <class Fn>
    void for_each(Fn&& fn) const {
        for (const auto& [key, values] : map_) fn(key.node, key.version, values);
    }

private:
    struct Key {
        std::uint64_t node;
        std::uint64_t version;
        bool operator==(const Key&) const = default;
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const {
            return static_cast<std::size_t>(derive_seed(k.node, k.version));
        }
    };

    std::unordered_map<Key, std::vector<std::vector<double>>, KeyHash> map_;
    std::optional<std::uint64_t> pinned_version_;
    Stats stats_;
};

inline std::vector<std::vector<double>> cache_lookup_or_encode(NeighborCache& cache,
                                                               std::uint64_t node_id,
                                                               const std::vector<std::int32_t>& tokens,
                                                               const ParamSet& params,
                                                               const ModelConfig& cfg) {
    return cache.lookup_or_encode(node_id, tokens, params, cfg);
}

// Final-embedding memo for cascaded evaluation: node texts are encoded
// independently there, so the per-node text embedding can be reused across
// candidates. Keyed like NeighborCache.
class TextEmbedCache {
public:
    const std::vector<double>& lookup_or_encode(std::uint64_t node_id,
                                                const std::vector<std::int32_t>& tokens,
                                                const ParamSet& params, const ModelConfig& cfg) {
        const std::uint64_t version = params.version_hash(cfg);
        const auto key = std::make_pair(node_id, version);
        auto it = map_.find(key);
        if (it != map_.end()) return it->second;
        NoGradGuard ng;
        Tensor z = encode_plain_stack(tokens, params, cfg).z_final;
        auto [pos, inserted] =
            map_.emplace(key, std::vector<double>(z.data(), z.data() + z.numel()));
        (void)inserted;
        return pos->second;
    }

    std::size_t size() const { return map_.size(); }

private:
    struct PairHash {
        std::size_t operator()(const std::pair<std::uint64_t, std::uint64_t>& p) const {
            return static_cast<std::size_t>(derive_seed(p.first, p.second));
        }
    };
    std::unordered_map<std::pair<std::uint64_t, std::uint64_t>, std::vector<double>, PairHash> map_;
};

namespace detail {

inline const MhaWeights& gnn_weights(const ParamSet& params, const ModelConfig& cfg, int layer) {
    return params.gnn[cfg.share_gnn ? 0 : layer - 1];
}

inline const RelationBias* gnn_bias(const ParamSet& params, const ModelConfig& cfg, int layer) {
    if (!cfg.relation_bias) return nullptr;
    return &params.gnn_bias[cfg.share_gnn ? 0 : layer - 1];
}

}  // namespace detail

// Algorithm-1 encoder. Layer 0 encodes every node independently; each later
// layer gathers node-level embeddings, aggregates them in the GNN and feeds
// each node its messenger. In unidirectional mode only the center consumes a
// messenger, neighbours stay messenger-free (and may come from the cache).
inline Tensor encode_graph(const GraphInput& input, const ParamSet& params, const ModelConfig& cfg,
                           NeighborCache* cache = nullptr) {
    validate_graph_input(input, cfg);
    if (cache && cfg.mode != EncodeMode::kUnidirectional)
        throw ContractError("encode_graph: a neighbor cache requires unidirectional mode");
    if (cache && input.node_ids.empty())
        throw ContractError("encode_graph: cache lookups need node ids");

    const std::size_t p = static_cast<std::size_t>(cfg.max_tokens);
    const std::size_t m = input.node_count();

    auto [center_ids, center_mask] = detail::pad_tokens(input.center, p);
    Tensor h_center = transformer_layer(token_embed(center_ids, params.embed), std::nullopt,
                                        params.layers[0], center_mask);

    if (cfg.mode == EncodeMode::kBidirectional) {
        std::vector<Tensor> h(m);
        std::vector<Mask> masks(m);
        h[0] = h_center;
        masks[0] = center_mask;
        for (std::size_t g = 1; g < m; ++g) {
            auto [ids, mask] = detail::pad_tokens(input.neighbors[g - 1], p);
            h[g] = transformer_layer(token_embed(ids, params.embed), std::nullopt,
                                     params.layers[0], mask);
            masks[g] = std::move(mask);
        }
        for (int l = 1; l < cfg.layers; ++l) {
            std::vector<Tensor> z(m);
            for (std::size_t g = 0; g < m; ++g) z[g] = take_row(h[g], 0);
            Tensor aggregated = gnn_mha(stack_rows(z), detail::gnn_weights(params, cfg, l),
                                        detail::gnn_bias(params, cfg, l));
            for (std::size_t g = 0; g < m; ++g)
                h[g] = transformer_layer(h[g], take_row(aggregated, g), params.layers[l], masks[g]);
        }
        return take_row(h[0], 0);
    }

    // Unidirectional: neighbour stacks are independent of the center; the GNN
    // only produces the center's row. The center consumes neighbour states
    // z^1..z^{L-1}, so the live path stops after TRM^{L-2} (the values are
    // identical to a full plain stack).
    std::vector<std::vector<Tensor>> neighbor_z(m > 1 ? m - 1 : 0);
    for (std::size_t g = 1; g < m; ++g) {
        if (cache) {
            const auto& values = cache->lookup_or_encode(input.node_ids[g], input.neighbors[g - 1],
                                                         params, cfg);
            for (const auto& v : values)
                neighbor_z[g - 1].push_back(Tensor::from_data({v.size()}, v));
        } else {
            auto [ids, mask] = detail::pad_tokens(input.neighbors[g - 1], p);
            Tensor h = token_embed(ids, params.embed);
            for (int l = 0; l + 1 < cfg.layers; ++l) {
                h = transformer_layer(h, std::nullopt, params.layers[l], mask);
                neighbor_z[g - 1].push_back(take_row(h, 0));
            }
        }
    }
    for (int l = 1; l < cfg.layers; ++l) {
        std::vector<Tensor> z;
        z.reserve(m);
        z.push_back(take_row(h_center, 0));
        for (std::size_t g = 1; g < m; ++g) z.push_back(neighbor_z[g - 1][l - 1]);
        Tensor messenger = gnn_mha_center(stack_rows(z), detail::gnn_weights(params, cfg, l),
                                          detail::gnn_bias(params, cfg, l));
        h_center = transformer_layer(h_center, messenger, params.layers[l], center_mask);
    }
    return take_row(h_center, 0);
}

// Cascaded baselines: every node is encoded independently through the full
// stack; the final [CLS] states are pooled. Empty neighbourhoods pool to the
// zero vector. An optional TextEmbedCache reuses per-node text embeddings
// (inference only).
inline Tensor cascaded_encode(const GraphInput& input, const ParamSet& params,
                              const ModelConfig& cfg, Aggregator aggregator,
                              TextEmbedCache* cache = nullptr) {
    validate_graph_input(input, cfg);
    if (aggregator == Aggregator::kNested)
        throw ContractError("cascaded_encode: use encode_graph for the nested path");
    if (cache && input.node_ids.empty())
        throw ContractError("cascaded_encode: cache lookups need node ids");

    auto text_embed = [&](std::size_t node_index, const std::vector<std::int32_t>& tokens) {
        if (!cache) return encode_plain_stack(tokens, params, cfg).z_final;
        const auto& v = cache->lookup_or_encode(input.node_ids[node_index], tokens, params, cfg);
        return Tensor::from_data({v.size()}, v);
    };

    Tensor center = text_embed(0, input.center);
    if (aggregator == Aggregator::kNone) return center;

    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    std::vector<Tensor> neighbor_emb;
    neighbor_emb.reserve(input.neighbors.size());
    for (std::size_t g = 0; g < input.neighbors.size(); ++g)
        neighbor_emb.push_back(text_embed(g + 1, input.neighbors[g]));

    if (aggregator == Aggregator::kGat) {
        std::vector<Tensor> all;
        all.reserve(1 + neighbor_emb.size());
        all.push_back(center);
        for (auto& t : neighbor_emb) all.push_back(t);
        Tensor stacked = stack_rows(all);
        Tensor scores = reshape(matmul(stacked, reshape(center, {d, 1})), {1, all.size()});
        return reshape(matmul(softmax_masked(scores), stacked), {d});
    }

    if (!params.pool.defined())
        throw ContractError("cascaded_encode: pooling head not initialized for this aggregator");

    Tensor pooled;
    if (neighbor_emb.empty()) {
        pooled = Tensor::zeros({d});
    } else if (aggregator == Aggregator::kMax) {
        pooled = reduce_rows_max(stack_rows(neighbor_emb));
    } else if (aggregator == Aggregator::kMean) {
        pooled = reduce_rows_mean(stack_rows(neighbor_emb));
    } else {  // kAtt
        Tensor stacked = stack_rows(neighbor_emb);
        Tensor scores = reshape(matmul(stacked, reshape(center, {d, 1})), {1, neighbor_emb.size()});
        pooled = reshape(matmul(softmax_masked(scores), stacked), {d});
    }
    Tensor joined = reshape(concat_vec(center, pooled), {1, 2 * d});
    return reshape(add_rowvec(matmul(joined, params.pool.w), params.pool.b), {d});
}

// Encode a batch of instances into [B x d]. Instances never see each other;
// batching is per-instance looping with identical semantics.
inline Tensor encode_batch(const std::vector<GraphInput>& inputs, const ParamSet& params,
                           const ModelConfig& cfg, Aggregator aggregator,
                           NeighborCache* cache = nullptr) {
    if (inputs.empty()) throw ContractError("encode_batch: empty batch");
    std::vector<Tensor> rows;
    rows.reserve(inputs.size());
    for (const auto& input : inputs) {
        rows.push_back(aggregator == Aggregator::kNested
                           ? encode_graph(input, params, cfg, cache)
                           : cascaded_encode(input, params, cfg, aggregator));
    }
    return stack_rows(rows);
}

}  // namespace gfkit
