#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gfkit/model.hpp"
#include "gfkit/rng.hpp"

namespace gfkit {

using NodeId = std::uint64_t;

struct Edge {
    NodeId u, v;
    bool operator==(const Edge&) const = default;
};

struct SynthConfig {
    std::size_t n_nodes = 1000;
    std::size_t clusters = 10;
    int vocab = 500;
    int tokens_per_node = 12;
    double rho = 0.5;         // fraction of tokens drawn from the shared noise unigram
    double p_in = 0.02;
    double p_out = 0.0005;
    bool heterogeneous = false;
    int relation_types = 3;   // used when heterogeneous

    void validate() const {
        if (n_nodes == 0) throw ConfigError("data.nodes must be positive");
        if (clusters == 0 || clusters > n_nodes)
            throw ConfigError("data.clusters must be in [1, nodes]");
        if (vocab <= kUnkTokenId + static_cast<int>(clusters))
            throw ConfigError("data.vocab too small for the cluster blocks");
        if (tokens_per_node < 1) throw ConfigError("data.tokens_per_node must be >= 1");
        if (rho < 0.0 || rho > 1.0) throw ConfigError("data.rho must be in [0, 1]");
        if (!(p_in > p_out) || p_out < 0.0)
            throw ConfigError("data must satisfy p_in > p_out >= 0");
        if (heterogeneous && relation_types < 2)
            throw ConfigError("data.relation_types must be >= 2 when heterogeneous");
    }
};

// Node texts plus undirected adjacency. Node ids are arbitrary u64; the
// synthetic generator uses 0..N-1.
struct TextGraph {
    std::map<NodeId, std::vector<std::int32_t>> nodes;
    std::map<NodeId, std::vector<NodeId>> adjacency;  // sorted, symmetric
    std::uint64_t seed = 0;
    SynthConfig synth;
    bool has_synth_config = false;

    std::size_t node_count() const { return nodes.size(); }

    std::size_t degree(NodeId id) const {
        auto it = adjacency.find(id);
        return it == adjacency.end() ? 0 : it->second.size();
    }

    const std::vector<NodeId>& neighbors_of(NodeId id) const {
        auto it = adjacency.find(id);
        if (it == adjacency.end()) throw RangeError("unknown node id " + std::to_string(id));
        return it->second;
    }

    const std::vector<std::int32_t>& tokens_of(NodeId id) const {
        auto it = nodes.find(id);
        if (it == nodes.end()) throw RangeError("unknown node id " + std::to_string(id));
        return it->second;
    }

    bool has_edge(NodeId u, NodeId v) const {
        auto it = adjacency.find(u);
        if (it == adjacency.end()) return false;
        return std::binary_search(it->second.begin(), it->second.end(), v);
    }

    void add_edge(NodeId u, NodeId v) {
        auto insert_sorted = [](std::vector<NodeId>& vec, NodeId x) {
            auto pos = std::lower_bound(vec.begin(), vec.end(), x);
            if (pos == vec.end() || *pos != x) vec.insert(pos, x);
        };
        insert_sorted(adjacency[u], v);
        insert_sorted(adjacency[v], u);
    }

    std::vector<Edge> edges() const {
        std::vector<Edge> out;
        for (const auto& [u, nbrs] : adjacency)
            for (NodeId v : nbrs)
                if (u < v) out.push_back({u, v});
        return out;
    }

    // Full-scan invariant check: symmetry, no self loops, ids resolve.
    void validate() const {
        for (const auto& [u, nbrs] : adjacency) {
            if (!nodes.count(u)) throw ContractError("adjacency references unknown node");
            if (!std::is_sorted(nbrs.begin(), nbrs.end()))
                throw ContractError("adjacency list not sorted");
            for (NodeId v : nbrs) {
                if (v == u) throw ContractError("self loop at node " + std::to_string(u));
                if (!nodes.count(v)) throw ContractError("edge to unknown node");
                if (!has_edge(v, u)) throw ContractError("asymmetric edge");
            }
        }
    }
};

struct GraphSplits {
    std::vector<Edge> train, valid, test;
};

struct SynthOutput {
    TextGraph graph;
    GraphSplits splits;
};

namespace detail {

// Token blocks: ids [4, V) split into a shared noise block (~10%) and C
// equal cluster blocks with disjoint supports. Noise draws are Zipf-ish,
// cluster draws uniform over the block. Wide cluster blocks keep node
// multisets distinctive within a cluster.
struct TokenBlocks {
    std::int32_t noise_begin, noise_end;
    std::int32_t cluster_size;
    std::vector<double> noise_cdf;

    TokenBlocks(int vocab, std::size_t clusters) {
        const std::int32_t usable = vocab - (kUnkTokenId + 1);
        std::int32_t noise = std::max<std::int32_t>(1, usable / 10);
        cluster_size = (usable - noise) / static_cast<std::int32_t>(clusters);
        if (cluster_size < 1) throw ConfigError("vocab too small for cluster blocks");
        noise = usable - cluster_size * static_cast<std::int32_t>(clusters);
        noise_begin = kUnkTokenId + 1;
        noise_end = noise_begin + noise;
        noise_cdf.resize(noise);
        double acc = 0.0;
        for (std::int32_t i = 0; i < noise; ++i) {
            acc += 1.0 / static_cast<double>(i + 1);
            noise_cdf[i] = acc;
        }
        for (auto& v : noise_cdf) v /= acc;
    }

    std::int32_t cluster_begin(std::size_t c) const {
        return noise_end + static_cast<std::int32_t>(c) * cluster_size;
    }

    std::int32_t draw_noise(Rng& rng) const {
        const double u = rng.uniform();
        const auto it = std::lower_bound(noise_cdf.begin(), noise_cdf.end(), u);
        return noise_begin + static_cast<std::int32_t>(it - noise_cdf.begin());
    }

    std::int32_t draw_cluster(std::size_t c, Rng& rng) const {
        return cluster_begin(c) + static_cast<std::int32_t>(rng.below(cluster_size));
    }
};

}  // namespace detail

// Stochastic-block-model graph with mixture-unigram node texts. Splits are
// 80/10/10 over edges, except that a node's only edge always stays in train.
inline SynthOutput generate_synthetic_graph(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SynthOutput out;
    TextGraph& graph = out.graph;
    graph.seed = seed;
    graph.synth = cfg;
    graph.has_synth_config = true;

    Rng cluster_rng(derive_seed(seed, "clusters"));
    std::vector<std::size_t> cluster(cfg.n_nodes);
    for (auto& c : cluster) c = static_cast<std::size_t>(cluster_rng.below(cfg.clusters));

    detail::TokenBlocks blocks(cfg.vocab, cfg.clusters);
    Rng token_rng(derive_seed(seed, "tokens"));
    for (NodeId id = 0; id < cfg.n_nodes; ++id) {
        std::vector<std::int32_t> tokens;
        tokens.reserve(static_cast<std::size_t>(cfg.tokens_per_node) + 1);
        tokens.push_back(kClsTokenId);
        for (int t = 0; t < cfg.tokens_per_node; ++t) {
            if (token_rng.bernoulli(cfg.rho))
                tokens.push_back(blocks.draw_noise(token_rng));
            else
                tokens.push_back(blocks.draw_cluster(cluster[id], token_rng));
        }
        graph.nodes[id] = std::move(tokens);
        graph.adjacency[id];  // ensure every node has an adjacency entry
    }

    const double mean_cluster = static_cast<double>(cfg.n_nodes) / cfg.clusters;
    const double expected_degree = (mean_cluster - 1.0) * cfg.p_in +
                                   (cfg.n_nodes - mean_cluster) * cfg.p_out;
    if (expected_degree < 1.0)
        std::cerr << "[gfkit] warning: expected degree " << expected_degree
                  << " < 1; graph will be mostly isolated nodes\n";

    Rng edge_rng(derive_seed(seed, "edges"));
    std::vector<std::vector<std::size_t>> relation_map;
    if (cfg.heterogeneous) {
        // relation 0 is homophily; the others connect permuted cluster pairs
        Rng perm_rng(derive_seed(seed, "relations"));
        for (int r = 0; r < cfg.relation_types; ++r) {
            std::vector<std::size_t> perm(cfg.clusters);
            for (std::size_t c = 0; c < cfg.clusters; ++c) perm[c] = c;
            if (r > 0) perm_rng.shuffle(perm);
            relation_map.push_back(std::move(perm));
        }
    }
    for (NodeId i = 0; i < cfg.n_nodes; ++i) {
        for (NodeId j = i + 1; j < cfg.n_nodes; ++j) {
            bool edge = false;
            if (!cfg.heterogeneous) {
                edge = edge_rng.bernoulli(cluster[i] == cluster[j] ? cfg.p_in : cfg.p_out);
            } else {
                const double p_rel = cfg.p_in / cfg.relation_types;
                for (const auto& perm : relation_map) {
                    const bool match = perm[cluster[i]] == cluster[j] ||
                                       perm[cluster[j]] == cluster[i];
                    if (edge_rng.bernoulli(match ? p_rel : cfg.p_out / cfg.relation_types))
                        edge = true;
                }
            }
            if (edge) graph.add_edge(i, j);
        }
    }
    graph.validate();

    // Edge splits: an edge that is some endpoint's only edge is pinned to
    // train, the rest are shuffled into 80/10/10.
    std::vector<Edge> all = graph.edges();
    std::vector<Edge> free_edges;
    for (const Edge& e : all) {
        if (graph.degree(e.u) == 1 || graph.degree(e.v) == 1)
            out.splits.train.push_back(e);
        else
            free_edges.push_back(e);
    }
    Rng split_rng(derive_seed(seed, "splits"));
    split_rng.shuffle(free_edges);
    const std::size_t n_test = all.size() / 10;
    const std::size_t n_valid = all.size() / 10;
    for (std::size_t i = 0; i < free_edges.size(); ++i) {
        if (i < n_test && out.splits.test.size() < n_test)
            out.splits.test.push_back(free_edges[i]);
        else if (i < n_test + n_valid && out.splits.valid.size() < n_valid)
            out.splits.valid.push_back(free_edges[i]);
        else
            out.splits.train.push_back(free_edges[i]);
    }
    return out;
}

// min(k, degree) distinct neighbours, uniform without replacement.
inline std::vector<NodeId> sample_neighbors(const TextGraph& graph, NodeId node, std::size_t k,
                                            Rng& rng) {
    const auto& nbrs = graph.neighbors_of(node);
    auto idx = rng.sample_indices(nbrs.size(), k);
    std::vector<NodeId> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(nbrs[i]);
    return out;
}

// A positive link-prediction pair with its sampled neighbourhoods.
struct TrainPair {
    NodeId q = 0, k = 0;
    std::vector<NodeId> q_neighbors, k_neighbors;
};

enum class NaivePairMode { kDrop, kRedraw };

namespace detail {

// Replace `offender` in `sample` with an unused neighbour of `node` other
// than `exclude`; erase it when no alternative exists.
inline void redraw_neighbor(const TextGraph& graph, NodeId node, NodeId offender, NodeId exclude,
                            std::vector<NodeId>& sample, Rng& rng) {
    sample.erase(std::remove(sample.begin(), sample.end(), offender), sample.end());
    std::vector<NodeId> pool;
    for (NodeId cand : graph.neighbors_of(node)) {
        if (cand == exclude) continue;
        if (std::find(sample.begin(), sample.end(), cand) != sample.end()) continue;
        pool.push_back(cand);
    }
    if (!pool.empty()) sample.push_back(pool[rng.below(pool.size())]);
}

}  // namespace detail

// Drop (or re-draw around) pairs whose partner leaked into the sampled
// neighbour set.
inline std::vector<TrainPair> filter_naive_pairs(std::vector<TrainPair> pairs,
                                                 const TextGraph& graph, NaivePairMode mode,
                                                 Rng& rng) {
    std::vector<TrainPair> out;
    out.reserve(pairs.size());
    for (auto& pair : pairs) {
        const bool k_in_q = std::find(pair.q_neighbors.begin(), pair.q_neighbors.end(), pair.k) !=
                            pair.q_neighbors.end();
        const bool q_in_k = std::find(pair.k_neighbors.begin(), pair.k_neighbors.end(), pair.q) !=
                            pair.k_neighbors.end();
        if (k_in_q || q_in_k) {
            if (mode == NaivePairMode::kDrop) continue;
            if (k_in_q) detail::redraw_neighbor(graph, pair.q, pair.k, pair.k, pair.q_neighbors, rng);
            if (q_in_k) detail::redraw_neighbor(graph, pair.k, pair.q, pair.q, pair.k_neighbors, rng);
        }
        out.push_back(std::move(pair));
    }
    return out;
}

// One TrainPair per split edge (optionally both orientations), neighbours
// sampled uniformly, then naive-pair filtering.
inline std::vector<TrainPair> build_link_pairs(const TextGraph& graph,
                                               const std::vector<Edge>& edges, std::size_t k,
                                               Rng& rng, bool both_orientations = false,
                                               NaivePairMode mode = NaivePairMode::kRedraw) {
    std::vector<TrainPair> pairs;
    pairs.reserve(edges.size() * (both_orientations ? 2 : 1));
    auto add = [&](NodeId q, NodeId kk) {
        TrainPair p;
        p.q = q;
        p.k = kk;
        p.q_neighbors = sample_neighbors(graph, q, k, rng);
        p.k_neighbors = sample_neighbors(graph, kk, k, rng);
        pairs.push_back(std::move(p));
    };
    for (const Edge& e : edges) {
        add(e.u, e.v);
        if (both_orientations) add(e.v, e.u);
    }
    return filter_naive_pairs(std::move(pairs), graph, mode, rng);
}

// Build the encoding instance of a node: its (truncated) token sequence plus
// the sequences of the given neighbours.
inline GraphInput make_graph_input(const TextGraph& graph, NodeId node,
                                   const std::vector<NodeId>& neighbor_ids, int max_tokens) {
    auto truncate = [max_tokens](std::vector<std::int32_t> tokens) {
        if (tokens.size() > static_cast<std::size_t>(max_tokens))
            tokens.resize(static_cast<std::size_t>(max_tokens));
        return tokens;
    };
    GraphInput input;
    input.center = truncate(graph.tokens_of(node));
    input.node_ids.push_back(node);
    for (NodeId nb : neighbor_ids) {
        input.neighbors.push_back(truncate(graph.tokens_of(nb)));
        input.node_ids.push_back(nb);
    }
    return input;
}

struct EvalInstance {
    GraphInput query;
    std::vector<GraphInput> candidates;
    std::size_t positive_index = 0;
};

// Per test edge: the query plus 1 positive and n_neg sampled negatives, each
// packaged with its own sampled neighbourhood. Negatives avoid the query's
// true neighbours unless exclude_adjacent is off (then only q and the
// positive are excluded).
inline std::vector<EvalInstance> make_eval_instances(const TextGraph& graph,
                                                     const std::vector<Edge>& test_edges,
                                                     std::size_t n_neg, std::size_t k,
                                                     int max_tokens, Rng& rng,
                                                     bool exclude_adjacent = true) {
    if (n_neg < 1) throw ContractError("make_eval_instances: n_neg must be >= 1");
    std::vector<NodeId> all_nodes;
    all_nodes.reserve(graph.node_count());
    for (const auto& [id, tokens] : graph.nodes) all_nodes.push_back(id);

    std::vector<EvalInstance> out;
    out.reserve(test_edges.size());
    for (const Edge& e : test_edges) {
        const NodeId q = e.u, pos = e.v;
        std::vector<NodeId> eligible;
        eligible.reserve(all_nodes.size());
        for (NodeId cand : all_nodes) {
            if (cand == q || cand == pos) continue;
            if (exclude_adjacent && graph.has_edge(q, cand)) continue;
            eligible.push_back(cand);
        }
        if (eligible.size() < n_neg) {
            std::cerr << "[gfkit] warning: skipping eval instance for edge (" << q << "," << pos
                      << "): only " << eligible.size() << " eligible negatives\n";
            continue;
        }
        auto idx = rng.sample_indices(eligible.size(), n_neg);

        EvalInstance inst;
        inst.query = make_graph_input(graph, q, sample_neighbors(graph, q, k, rng), max_tokens);
        inst.positive_index = static_cast<std::size_t>(rng.below(n_neg + 1));
        std::vector<NodeId> cand_ids(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) cand_ids[i] = eligible[idx[i]];
        cand_ids.insert(cand_ids.begin() + static_cast<std::ptrdiff_t>(inst.positive_index), pos);
        for (NodeId cand : cand_ids)
            inst.candidates.push_back(
                make_graph_input(graph, cand, sample_neighbors(graph, cand, k, rng), max_tokens));
        out.push_back(std::move(inst));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Minimal frequency vocabulary + whitespace/punctuation tokenizer for small
// real corpora. Reserved ids: PAD=0, CLS=1, MASK=2, UNK=3.
// ---------------------------------------------------------------------------

struct Vocab {
    std::vector<std::string> id_to_word;
    std::unordered_map<std::string, std::int32_t> word_to_id;

    std::int32_t size() const { return static_cast<std::int32_t>(id_to_word.size()); }

    std::int32_t lookup(const std::string& word) const {
        auto it = word_to_id.find(word);
        return it == word_to_id.end() ? kUnkTokenId : it->second;
    }
};

namespace detail {

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

}  // namespace detail

inline Vocab build_vocab(const std::vector<std::string>& texts, std::int32_t max_size) {
    if (max_size <= kUnkTokenId) throw ConfigError("vocab size must exceed the reserved ids");
    std::map<std::string, std::size_t> counts;  // ordered for deterministic ties
    for (const auto& text : texts)
        for (const auto& w : detail::split_words(text)) counts[w]++;
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab vocab;
    vocab.id_to_word = {"[PAD]", "[CLS]", "[MASK]", "[UNK]"};
    for (const auto& [word, count] : ranked) {
        if (vocab.size() >= max_size) break;
        vocab.word_to_id[word] = vocab.size();
        vocab.id_to_word.push_back(word);
    }
    return vocab;
}

// Lowercase, split on non-alphanumerics, map through the vocabulary with UNK
// for misses, truncate to max_tokens-1 and prepend [CLS].
inline std::vector<std::int32_t> tokenize_text(const std::string& text, const Vocab& vocab,
                                               int max_tokens) {
    std::vector<std::int32_t> out = {kClsTokenId};
    for (const auto& w : detail::split_words(text)) {
        if (out.size() >= static_cast<std::size_t>(max_tokens)) break;
        out.push_back(vocab.lookup(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Graph file format: "#NODE id tok tok ..." then "#EDGE u v", in sorted
// order, plus a JSON sidecar written by the caller (see io paths in the CLI).
// ---------------------------------------------------------------------------

inline void save_graph(const std::filesystem::path& path, const TextGraph& graph) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write graph file " + path.string());
    for (const auto& [id, tokens] : graph.nodes) {
        f << "#NODE " << id;
        for (std::int32_t t : tokens) f << ' ' << t;
        f << '\n';
    }
    for (const Edge& e : graph.edges()) f << "#EDGE " << e.u << ' ' << e.v << '\n';
    if (!f) throw IoError("failed writing graph file " + path.string());
}

inline TextGraph load_graph(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open graph file " + path.string());
    TextGraph graph;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "#NODE") {
            NodeId id;
            ss >> id;
            std::vector<std::int32_t> tokens;
            std::int32_t t;
            while (ss >> t) tokens.push_back(t);
            graph.nodes[id] = std::move(tokens);
            graph.adjacency[id];
        } else if (tag == "#EDGE") {
            NodeId u, v;
            if (!(ss >> u >> v))
                throw IoError("malformed edge at " + path.string() + ":" + std::to_string(line_no));
            graph.add_edge(u, v);
        } else {
            throw IoError("unknown record '" + tag + "' at " + path.string() + ":" +
                          std::to_string(line_no));
        }
    }
    graph.validate();
    return graph;
}

inline void save_edges(const std::filesystem::path& path, const std::vector<Edge>& edges) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write edge file " + path.string());
    for (const Edge& e : edges) f << e.u << ' ' << e.v << '\n';
}

inline std::vector<Edge> load_edges(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open edge file " + path.string());
    std::vector<Edge> edges;
    NodeId u, v;
    while (f >> u >> v) edges.push_back({u, v});
    return edges;
}

}  // namespace gfkit
