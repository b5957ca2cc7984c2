#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gfkit/tensor.hpp"

namespace gfkit {

constexpr double kLayerNormEps = 1e-5;

// Per-head projection matrices [d x d_head]. The token-level attention keeps
// a standard output projection; the graph-aggregation attention does not
// (heads are concatenated and used directly).
struct MhaWeights {
    std::vector<Tensor> wq, wk, wv;
    Tensor wo;  // undefined => no output projection

    int heads() const { return static_cast<int>(wq.size()); }
    std::size_t head_dim() const { return wq.at(0).extent(1); }
    std::size_t model_dim() const { return wq.at(0).extent(0); }
};

// One scalar per head per node-pair relation class.
// Classes: 0 center-center, 1 center-neighbour, 2 neighbour-neighbour.
struct RelationBias {
    Tensor table;  // [heads x 3]
};

struct LayerNormParams {
    Tensor gamma, beta;  // [d]
};

struct TransformerLayerWeights {
    MhaWeights attn;
    Tensor mlp_w1, mlp_b1;  // d -> 4d
    Tensor mlp_w2, mlp_b2;  // 4d -> d
    LayerNormParams ln1, ln2;
};

struct EmbeddingTable {
    Tensor word;  // [V x d]
    Tensor pos;   // [P_max x d]
};

// H0[p] = word[token p] + pos[p]; position 0 carries the leading [CLS].
inline Tensor token_embed(const std::vector<std::int32_t>& token_ids, const EmbeddingTable& table) {
    const std::size_t p_max = table.pos.extent(0);
    if (token_ids.empty()) throw RangeError("token_embed: empty token sequence");
    if (token_ids.size() > p_max)
        throw RangeError("token_embed: sequence length " + std::to_string(token_ids.size()) +
                         " exceeds position table of " + std::to_string(p_max));
    std::vector<std::int32_t> positions(token_ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i);
    return add(embed_rows(table.word, token_ids), embed_rows(table.pos, positions));
}

namespace detail {

// Relation class of node pair (i, j) with node 0 the center.
inline std::int32_t relation_class(std::size_t i, std::size_t j) {
    if (i == 0 && j == 0) return 0;
    if (i == 0 || j == 0) return 1;
    return 2;
}

}  // namespace detail

// [M x M] additive attention bias for one head, assembled from the three
// relation-class scalars.
inline Tensor relation_bias_matrix(std::size_t node_count, const RelationBias& bias, int head) {
    if (node_count < 1) throw RangeError("relation_bias_matrix: node count must be positive");
    std::vector<std::int32_t> classes(node_count * node_count);
    for (std::size_t i = 0; i < node_count; ++i)
        for (std::size_t j = 0; j < node_count; ++j)
            classes[i * node_count + j] = detail::relation_class(i, j);
    Tensor head_row = take_row(bias.table, static_cast<std::size_t>(head));
    return reshape(gather(head_row, classes), {node_count, node_count});
}

namespace detail {

inline Mask broadcast_key_mask(const Mask& key_mask, std::size_t rows) {
    if (key_mask.empty()) return {};
    Mask full(rows * key_mask.size());
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(key_mask.begin(), key_mask.end(), full.begin() + r * key_mask.size());
    return full;
}

}  // namespace detail

// Multi-head attention over node-level embeddings (graph aggregation).
// Heads are concatenated with no output projection, residual, LayerNorm or
// MLP. node_mask marks valid node slots as keys; rows of masked nodes are
// computed but unused downstream.
inline Tensor gnn_mha(const Tensor& z, const MhaWeights& w, const RelationBias* bias,
                      const Mask& node_mask = {}) {
    const std::size_t m = z.extent(0);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(w.head_dim()));
    std::vector<Tensor> heads;
    heads.reserve(w.wq.size());
    const Mask full_mask = detail::broadcast_key_mask(node_mask, m);
    for (int j = 0; j < w.heads(); ++j) {
        Tensor q = matmul(z, w.wq[j]);
        Tensor k = matmul(z, w.wk[j]);
        Tensor v = matmul(z, w.wv[j]);
        Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
        if (bias) scores = add(scores, relation_bias_matrix(m, *bias, j));
        heads.push_back(matmul(softmax_masked(scores, full_mask), v));
    }
    return concat_cols(heads);
}

// Center-row-only variant for unidirectional aggregation: returns the
// aggregated embedding of node 0 as a [d] vector. Produces bitwise the same
// values as row 0 of gnn_mha.
inline Tensor gnn_mha_center(const Tensor& z, const MhaWeights& w, const RelationBias* bias,
                             const Mask& node_mask = {}) {
    const std::size_t m = z.extent(0);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(w.head_dim()));
    Tensor center = reshape(take_row(z, 0), {1, z.extent(1)});
    std::vector<std::int32_t> classes(m);
    for (std::size_t j = 0; j < m; ++j) classes[j] = detail::relation_class(0, j);
    std::vector<Tensor> heads;
    heads.reserve(w.wq.size());
    for (int j = 0; j < w.heads(); ++j) {
        Tensor q = matmul(center, w.wq[j]);
        Tensor k = matmul(z, w.wk[j]);
        Tensor v = matmul(z, w.wv[j]);
        Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
        if (bias)
            scores = add(scores, reshape(gather(take_row(bias->table, j), classes), {1, m}));
        heads.push_back(matmul(softmax_masked(scores, node_mask), v));
    }
    return reshape(concat_cols(heads), {w.model_dim()});
}

// Attention with queries from h and keys/values from h_kv, so the output has
// as many rows as h. h_kv has either P rows (plain self-attention) or P+1
// (messenger prepended). key_mask marks valid key positions in h_kv.
inline Tensor asymmetric_mha(const Tensor& h, const Tensor& h_kv, const MhaWeights& w,
                             const Mask& key_mask = {}) {
    const std::size_t p = h.extent(0);
    const std::size_t pk = h_kv.extent(0);
    if (pk != p && pk != p + 1)
        throw ShapeError("asymmetric_mha: key/value rows must be P or P+1, got " +
                         std::to_string(pk) + " for P=" + std::to_string(p));
    if (!key_mask.empty() && key_mask.size() != pk)
        throw ShapeError("asymmetric_mha: key mask length mismatch");
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(w.head_dim()));
    const Mask full_mask = detail::broadcast_key_mask(key_mask, p);
    std::vector<Tensor> heads;
    heads.reserve(w.wq.size());
    for (int j = 0; j < w.heads(); ++j) {
        Tensor q = matmul(h, w.wq[j]);
        Tensor k = matmul(h_kv, w.wk[j]);
        Tensor v = matmul(h_kv, w.wv[j]);
        Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
        heads.push_back(matmul(softmax_masked(scores, full_mask), v));
    }
    Tensor out = concat_cols(heads);
    if (w.wo.defined()) out = matmul(out, w.wo);
    return out;
}

// One transformer block. With a messenger, keys/values run over
// Concat(messenger, H); the first residual adds the original H in both
// cases, and the output keeps P rows.
inline Tensor transformer_layer(const Tensor& h, const std::optional<Tensor>& messenger,
                                const TransformerLayerWeights& w, const Mask& key_mask = {}) {
    const std::size_t p = h.extent(0);
    if (!key_mask.empty() && key_mask.size() != p)
        throw ShapeError("transformer_layer: key mask length mismatch");
    Tensor attn;
    if (messenger.has_value()) {
        Tensor h_kv = concat_rows(reshape(*messenger, {1, h.extent(1)}), h);
        Mask kv_mask;
        if (!key_mask.empty()) {
            kv_mask.reserve(p + 1);
            kv_mask.push_back(1);  // the messenger is never masked
            kv_mask.insert(kv_mask.end(), key_mask.begin(), key_mask.end());
        }
        attn = asymmetric_mha(h, h_kv, w.attn, kv_mask);
    } else {
        attn = asymmetric_mha(h, h, w.attn, key_mask);
    }
    Tensor x = layer_norm(add(h, attn), w.ln1.gamma, w.ln1.beta, kLayerNormEps);
    Tensor hidden = gelu(add_rowvec(matmul(x, w.mlp_w1), w.mlp_b1));
    Tensor out = add_rowvec(matmul(hidden, w.mlp_w2), w.mlp_b2);
    return layer_norm(add(x, out), w.ln2.gamma, w.ln2.beta, kLayerNormEps);
}

}  // namespace gfkit
