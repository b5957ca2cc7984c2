#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gfkit/common.hpp"

namespace gfkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Row-major flat index of a multi-index.
inline std::size_t flat_index(const Shape& shape, const std::vector<std::size_t>& idx) {
    if (idx.size() != shape.size()) throw ShapeError("flat_index: rank mismatch");
    std::size_t flat = 0;
    for (std::size_t a = 0; a < shape.size(); ++a) {
        if (idx[a] >= shape[a]) throw RangeError("flat_index: index out of range");
        flat = flat * shape[a] + idx[a];
    }
    return flat;
}

inline std::vector<std::size_t> multi_index(const Shape& shape, std::size_t flat) {
    if (flat >= shape_numel(shape)) throw RangeError("multi_index: flat index out of range");
    std::vector<std::size_t> idx(shape.size());
    for (std::size_t a = shape.size(); a-- > 0;) {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
    return idx;
}

namespace detail {

inline bool& grad_mode() {
    static thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// RAII guard disabling tape recording in scope (inference paths).
class NoGradGuard {
public:
    NoGradGuard() : saved_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = saved_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

enum class OpKind {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kScale,
    kAddRowVec,
    kMatmul,
    kTranspose,
    kReshape,
    kSoftmaxMasked,
    kLayerNorm,
    kGelu,
    kEmbedRows,
    kGather,
    kTakeRow,
    kStackRows,
    kConcatRows,
    kConcatCols,
    kConcatVec,
    kReduceRowsMax,
    kReduceRowsMean,
    kLogSumExpRows,
    kTakeDiagonal,
    kSumAll,
    kMeanAll,
    kDot,
};

inline const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::kLeaf: return "leaf";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "sub";
        case OpKind::kMul: return "mul";
        case OpKind::kScale: return "scale";
        case OpKind::kAddRowVec: return "add_rowvec";
        case OpKind::kMatmul: return "matmul";
        case OpKind::kTranspose: return "transpose";
        case OpKind::kReshape: return "reshape";
        case OpKind::kSoftmaxMasked: return "softmax_masked";
        case OpKind::kLayerNorm: return "layer_norm";
        case OpKind::kGelu: return "gelu";
        case OpKind::kEmbedRows: return "embed_rows";
        case OpKind::kGather: return "gather";
        case OpKind::kTakeRow: return "take_row";
        case OpKind::kStackRows: return "stack_rows";
        case OpKind::kConcatRows: return "concat_rows";
        case OpKind::kConcatCols: return "concat_cols";
        case OpKind::kConcatVec: return "concat_vec";
        case OpKind::kReduceRowsMax: return "reduce_rows_max";
        case OpKind::kReduceRowsMean: return "reduce_rows_mean";
        case OpKind::kLogSumExpRows: return "logsumexp_rows";
        case OpKind::kTakeDiagonal: return "take_diagonal";
        case OpKind::kSumAll: return "sum_all";
        case OpKind::kMeanAll: return "mean_all";
        case OpKind::kDot: return "dot";
    }
    return "?";
}

// Dense row-major tensor participating in a dynamically recorded tape.
// TensorT is a cheap shared handle; storage is immutable once produced by an
// op except for gradient accumulation. The default scalar type is double;
// float is available as an opt-in mode for the numeric core.
template <class S>
class TensorT {
public:
    using Scalar = S;
    using Buffer = std::vector<S, TrackedAlloc<S>>;

    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return leaf(std::move(shape), Buffer{}, requires_grad, /*fill=*/true, S{0});
    }

    static TensorT full(Shape shape, S value, bool requires_grad = false) {
        return leaf(std::move(shape), Buffer{}, requires_grad, /*fill=*/true, value);
    }

    static TensorT from_data(Shape shape, const std::vector<S>& values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        Buffer buf(values.begin(), values.end());
        return leaf(std::move(shape), std::move(buf), requires_grad, /*fill=*/false, S{0});
    }

    static TensorT scalar_value(S v, bool requires_grad = false) {
        Buffer buf;
        buf.push_back(v);
        return leaf(Shape{}, std::move(buf), requires_grad, /*fill=*/false, S{0});
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

    S* data() { return node_->data.data(); }
    const S* data() const { return node_->data.data(); }

    S value() const {
        if (numel() != 1) throw ContractError("value(): tensor is not a scalar");
        return node_->data[0];
    }

    S at(std::vector<std::size_t> idx) const { return node_->data[flat_index(shape(), idx)]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->op == OpKind::kLeaf; }
    OpKind op() const { return node_->op; }

    // Gradient buffer, zero-filled on first access.
    S* grad() {
        ensure_grad();
        return node_->grad.data();
    }
    const Buffer& grad_buffer() const {
        const_cast<TensorT*>(this)->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S{0});
    }

    // Reverse-mode sweep from a scalar root. Fills grads of all reachable
    // leaves; repeated calls accumulate into leaf grads. Intermediate grads
    // are scratch state owned by the sweep.
    void backward() const {
        if (numel() != 1) throw ContractError("backward: root must be a scalar");
        if (!node_->requires_grad)
            throw ContractError("backward: root has no recorded tape (nothing requires grad)");

        std::vector<Node*> order;
        topo_sort(node_.get(), order);

        for (Node* n : order)
            if (n->op != OpKind::kLeaf) n->grad.assign(n->data.size(), S{0});
        if (node_->grad.empty()) node_->grad.assign(1, S{0});
        node_->grad[0] += S{1};
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
        }
    }

    bool same_storage(const TensorT& other) const { return node_ == other.node_; }

    // --- internal surface used by the op layer -----------------------------

    struct Node {
        Shape shape;
        Buffer data;
        Buffer grad;
        bool requires_grad = false;
        OpKind op = OpKind::kLeaf;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;
    };

    static TensorT make_op_result(Shape shape, Buffer data, OpKind op,
                                  std::vector<TensorT> parents,
                                  std::function<void(Node&)> backward_fn) {
        if (shape_numel(shape) != data.size()) throw ShapeError("op result shape/data mismatch");
        check_finite(data, op_name(op));
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        bool track = grad_enabled();
        if (track) {
            bool any = false;
            for (const auto& p : parents) any = any || p.node_->requires_grad;
            track = any;
        }
        if (track) {
            node->requires_grad = true;
            node->op = op;
            node->parents.reserve(parents.size());
            for (auto& p : parents) node->parents.push_back(p.node_);
            node->backward_fn = std::move(backward_fn);
        }
        TensorT t;
        t.node_ = std::move(node);
        return t;
    }

    void accumulate_grad(const S* g, std::size_t n) {
        ensure_grad();
        S* dst = node_->grad.data();
        for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
    }

    Node* node() const { return node_.get(); }

private:
    static void check_finite(const Buffer& data, const char* what) {
        for (const S& v : data) {
            if (!std::isfinite(static_cast<double>(v)))
                throw NonFiniteError(std::string("non-finite value produced by ") + what);
        }
    }

    static TensorT leaf(Shape shape, Buffer buf, bool requires_grad, bool fill, S fill_value) {
        auto node = std::make_shared<Node>();
        const std::size_t n = shape_numel(shape);
        node->shape = std::move(shape);
        if (fill) {
            node->data.assign(n, fill_value);
        } else {
            node->data = std::move(buf);
            check_finite(node->data, "leaf");
        }
        node->requires_grad = requires_grad;
        TensorT t;
        t.node_ = std::move(node);
        return t;
    }

    void ensure_grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), S{0});
    }

    static void topo_sort(Node* root, std::vector<Node*>& order) {
        // Iterative post-order DFS; each node appended after its parents.
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* parent = node->parents[next++].get();
                if (visited.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<double>;
using Mask = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Kernels. Plain ikj loops over contiguous storage; single-threaded and
// bitwise deterministic.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void gemm_nn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        S* ci = c + i * n;
        std::fill(ci, ci + n, S{0});
        const S* ai = a + i * k;
        for (std::size_t t = 0; t < k; ++t) {
            const S av = ai[t];
            const S* bt = b + t * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <class S>
void gemm_nt_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* ai = a + i * k;
        S* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const S* bj = b + j * k;
            S acc{0};
            for (std::size_t t = 0; t < k; ++t) acc += ai[t] * bj[t];
            ci[j] += acc;
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <class S>
void gemm_tn_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* ai = a + i * k;
        const S* bi = b + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const S av = ai[t];
            S* ct = c + t * n;
            for (std::size_t j = 0; j < n; ++j) ct[j] += av * bi[j];
        }
    }
}

template <class S>
void require_rank(const TensorT<S>& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

template <class S>
void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape(a, b, "add");
    typename TensorT<S>::Buffer out(a.numel());
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    count_op(a.numel());
    return TensorT<S>::make_op_result(
        a.shape(), std::move(out), OpKind::kAdd, {a, b},
        [a = a, b = b](typename TensorT<S>::Node& self) mutable {
            a.accumulate_grad(self.grad.data(), self.grad.size());
            b.accumulate_grad(self.grad.data(), self.grad.size());
        });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape(a, b, "sub");
    typename TensorT<S>::Buffer out(a.numel());
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
    count_op(a.numel());
    return TensorT<S>::make_op_result(
        a.shape(), std::move(out), OpKind::kSub, {a, b},
        [a = a, b = b](typename TensorT<S>::Node& self) mutable {
            a.accumulate_grad(self.grad.data(), self.grad.size());
            std::vector<S> neg(self.grad.size());
            for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
            b.accumulate_grad(neg.data(), neg.size());
        });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape(a, b, "mul");
    typename TensorT<S>::Buffer out(a.numel());
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    count_op(a.numel());
    return TensorT<S>::make_op_result(
        a.shape(), std::move(out), OpKind::kMul, {a, b},
        [a = a, b = b](typename TensorT<S>::Node& self) mutable {
            std::vector<S> tmp(self.grad.size());
            const S* pb2 = b.data();
            for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = self.grad[i] * pb2[i];
            a.accumulate_grad(tmp.data(), tmp.size());
            const S* pa2 = a.data();
            for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = self.grad[i] * pa2[i];
            b.accumulate_grad(tmp.data(), tmp.size());
        });
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
    typename TensorT<S>::Buffer out(a.numel());
    const S* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * c;
    count_op(a.numel());
    return TensorT<S>::make_op_result(a.shape(), std::move(out), OpKind::kScale, {a},
                                      [a = a, c](typename TensorT<S>::Node& self) mutable {
                                          std::vector<S> tmp(self.grad.size());
                                          for (std::size_t i = 0; i < tmp.size(); ++i)
                                              tmp[i] = self.grad[i] * c;
                                          a.accumulate_grad(tmp.data(), tmp.size());
                                      });
}

// x[r x c] + v[c] broadcast over rows.
template <class S>
TensorT<S> add_rowvec(const TensorT<S>& x, const TensorT<S>& v) {
    detail::require_rank(x, 2, "add_rowvec");
    detail::require_rank(v, 1, "add_rowvec");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    if (v.extent(0) != cols) throw ShapeError("add_rowvec: vector length mismatch");
    typename TensorT<S>::Buffer out(x.numel());
    const S* px = x.data();
    const S* pv = v.data();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = px[i * cols + j] + pv[j];
    count_op(x.numel());
    return TensorT<S>::make_op_result(
        x.shape(), std::move(out), OpKind::kAddRowVec, {x, v},
        [x = x, v = v, rows, cols](typename TensorT<S>::Node& self) mutable {
            x.accumulate_grad(self.grad.data(), self.grad.size());
            std::vector<S> dv(cols, S{0});
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) dv[j] += self.grad[i * cols + j];
            v.accumulate_grad(dv.data(), dv.size());
        });
}

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    typename TensorT<S>::Buffer out(m * n);
    detail::gemm_nn(a.data(), b.data(), out.data(), m, k, n);
    count_op(2 * m * k * n);
    return TensorT<S>::make_op_result(
        Shape{m, n}, std::move(out), OpKind::kMatmul, {a, b},
        [a = a, b = b, m, k, n](typename TensorT<S>::Node& self) mutable {
            // dA = dC * B^T, dB = A^T * dC
            std::vector<S> da(m * k, S{0});
            detail::gemm_nt_acc(self.grad.data(), b.data(), da.data(), m, n, k);
            a.accumulate_grad(da.data(), da.size());
            std::vector<S> db(k * n, S{0});
            detail::gemm_tn_acc(a.data(), self.grad.data(), db.data(), m, k, n);
            b.accumulate_grad(db.data(), db.size());
            count_op(4 * m * k * n);
        });
}

template <class S>
TensorT<S> transpose(const TensorT<S>& a) {
    detail::require_rank(a, 2, "transpose");
    const std::size_t m = a.extent(0), n = a.extent(1);
    typename TensorT<S>::Buffer out(m * n);
    const S* pa = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = pa[i * n + j];
    count_op(m * n);
    return TensorT<S>::make_op_result(
        Shape{n, m}, std::move(out), OpKind::kTranspose, {a},
        [a = a, m, n](typename TensorT<S>::Node& self) mutable {
            std::vector<S> da(m * n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) da[i * n + j] = self.grad[j * m + i];
            a.accumulate_grad(da.data(), da.size());
        });
}

template <class S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    typename TensorT<S>::Buffer out(a.data(), a.data() + a.numel());
    count_op(0);
    return TensorT<S>::make_op_result(std::move(shape), std::move(out), OpKind::kReshape, {a},
                                      [a = a](typename TensorT<S>::Node& self) mutable {
                                          a.accumulate_grad(self.grad.data(), self.grad.size());
                                      });
}

// Row-wise masked softmax over the last axis. mask entries: nonzero = kept.
// Masked entries get exactly zero weight (additive large-negative surrogate
// with max-subtraction; exp underflows to zero and is clamped exactly).
template <class S>
TensorT<S> softmax_masked(const TensorT<S>& x, const Mask& mask = {}) {
    if (x.rank() < 1) throw ShapeError("softmax_masked: rank must be >= 1");
    if (!mask.empty() && mask.size() != x.numel())
        throw ShapeError("softmax_masked: mask size must match tensor");
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.numel() / cols;
    typename TensorT<S>::Buffer out(x.numel());
    const S* px = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = px + r * cols;
        const std::uint8_t* mrow = mask.empty() ? nullptr : mask.data() + r * cols;
        S mx = S{0};
        bool seen = false;
        for (std::size_t j = 0; j < cols; ++j) {
            if (mrow && !mrow[j]) continue;
            if (!seen || row[j] > mx) mx = row[j];
            seen = true;
        }
        if (!seen) throw DegenerateRowError("softmax_masked: fully masked row " + std::to_string(r));
        S sum{0};
        S* orow = out.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            if (mrow && !mrow[j]) {
                orow[j] = S{0};
                continue;
            }
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::size_t j = 0; j < cols; ++j) orow[j] /= sum;
    }
    count_op(5 * x.numel());
    typename TensorT<S>::Buffer saved = out;
    return TensorT<S>::make_op_result(
        x.shape(), std::move(out), OpKind::kSoftmaxMasked, {x},
        [x = x, saved = std::move(saved), rows, cols](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(saved.size());
            for (std::size_t r = 0; r < rows; ++r) {
                const S* y = saved.data() + r * cols;
                const S* g = self.grad.data() + r * cols;
                S dotgy{0};
                for (std::size_t j = 0; j < cols; ++j) dotgy += g[j] * y[j];
                S* d = dx.data() + r * cols;
                for (std::size_t j = 0; j < cols; ++j) d[j] = y[j] * (g[j] - dotgy);
            }
            x.accumulate_grad(dx.data(), dx.size());
            count_op(4 * saved.size());
        });
}

// Per-row standardization followed by affine gamma/beta.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S{1e-5}) {
    detail::require_rank(x, 2, "layer_norm");
    detail::require_rank(gamma, 1, "layer_norm");
    detail::require_rank(beta, 1, "layer_norm");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    if (gamma.extent(0) != cols || beta.extent(0) != cols)
        throw ShapeError("layer_norm: gamma/beta length mismatch");
    typename TensorT<S>::Buffer out(x.numel());
    std::vector<S> xhat(x.numel());
    std::vector<S> inv_std(rows);
    const S* px = x.data();
    const S* pg = gamma.data();
    const S* pb = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = px + r * cols;
        S mean{0};
        for (std::size_t j = 0; j < cols; ++j) mean += row[j];
        mean /= static_cast<S>(cols);
        S var{0};
        for (std::size_t j = 0; j < cols; ++j) {
            const S d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<S>(cols);
        const S inv = S{1} / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t j = 0; j < cols; ++j) {
            const S xh = (row[j] - mean) * inv;
            xhat[r * cols + j] = xh;
            out[r * cols + j] = pg[j] * xh + pb[j];
        }
    }
    count_op(8 * x.numel());
    return TensorT<S>::make_op_result(
        x.shape(), std::move(out), OpKind::kLayerNorm, {x, gamma, beta},
        [x = x, gamma = gamma, beta = beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
         rows, cols](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(rows * cols), dgamma(cols, S{0}), dbeta(cols, S{0});
            const S* pg = gamma.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const S* g = self.grad.data() + r * cols;
                const S* xh = xhat.data() + r * cols;
                S mean_dxhat{0}, mean_dxhat_xhat{0};
                for (std::size_t j = 0; j < cols; ++j) {
                    const S dxh = g[j] * pg[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xh[j];
                    dgamma[j] += g[j] * xh[j];
                    dbeta[j] += g[j];
                }
                mean_dxhat /= static_cast<S>(cols);
                mean_dxhat_xhat /= static_cast<S>(cols);
                S* d = dx.data() + r * cols;
                for (std::size_t j = 0; j < cols; ++j) {
                    const S dxh = g[j] * pg[j];
                    d[j] = inv_std[r] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                }
            }
            x.accumulate_grad(dx.data(), dx.size());
            gamma.accumulate_grad(dgamma.data(), dgamma.size());
            beta.accumulate_grad(dbeta.data(), dbeta.size());
            count_op(10 * rows * cols);
        });
}

// Exact (erf-based) GELU.
template <class S>
TensorT<S> gelu(const TensorT<S>& x) {
    typename TensorT<S>::Buffer out(x.numel());
    const S* px = x.data();
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = static_cast<double>(px[i]);
        out[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    }
    count_op(15 * x.numel());
    return TensorT<S>::make_op_result(
        x.shape(), std::move(out), OpKind::kGelu, {x},
        [x = x](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(self.grad.size());
            const S* px = x.data();
            constexpr double kInvSqrt2 = 0.70710678118654752440;
            constexpr double kInvSqrt2Pi = 0.39894228040143267794;
            for (std::size_t i = 0; i < dx.size(); ++i) {
                const double v = static_cast<double>(px[i]);
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx[i] = self.grad[i] * static_cast<S>(cdf + v * pdf);
            }
            x.accumulate_grad(dx.data(), dx.size());
            count_op(15 * dx.size());
        });
}

// Gather rows of a [V x d] table; backward scatter-adds into the table.
template <class S>
TensorT<S> embed_rows(const TensorT<S>& table, const std::vector<std::int32_t>& ids) {
    detail::require_rank(table, 2, "embed_rows");
    const std::size_t v = table.extent(0), d = table.extent(1);
    typename TensorT<S>::Buffer out(ids.size() * d);
    const S* pt = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::int32_t id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw RangeError("embed_rows: id " + std::to_string(id) + " outside table of " +
                             std::to_string(v));
        std::memcpy(out.data() + i * d, pt + static_cast<std::size_t>(id) * d, d * sizeof(S));
    }
    count_op(ids.size() * d);
    return TensorT<S>::make_op_result(
        Shape{ids.size(), d}, std::move(out), OpKind::kEmbedRows, {table},
        [table = table, ids, d](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dt(table.numel(), S{0});
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const S* g = self.grad.data() + i * d;
                S* row = dt.data() + static_cast<std::size_t>(ids[i]) * d;
                for (std::size_t j = 0; j < d; ++j) row[j] += g[j];
            }
            table.accumulate_grad(dt.data(), dt.size());
        });
}

// Gather elements of a rank-1 tensor.
template <class S>
TensorT<S> gather(const TensorT<S>& x, const std::vector<std::int32_t>& ids) {
    detail::require_rank(x, 1, "gather");
    const std::size_t n = x.extent(0);
    typename TensorT<S>::Buffer out(ids.size());
    const S* px = x.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= n)
            throw RangeError("gather: index out of range");
        out[i] = px[static_cast<std::size_t>(ids[i])];
    }
    count_op(ids.size());
    return TensorT<S>::make_op_result(
        Shape{ids.size()}, std::move(out), OpKind::kGather, {x},
        [x = x, ids](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(x.numel(), S{0});
            for (std::size_t i = 0; i < ids.size(); ++i)
                dx[static_cast<std::size_t>(ids[i])] += self.grad[i];
            x.accumulate_grad(dx.data(), dx.size());
        });
}

template <class S>
TensorT<S> take_row(const TensorT<S>& x, std::size_t row) {
    detail::require_rank(x, 2, "take_row");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    if (row >= rows) throw RangeError("take_row: row out of range");
    typename TensorT<S>::Buffer out(x.data() + row * cols, x.data() + (row + 1) * cols);
    count_op(cols);
    return TensorT<S>::make_op_result(
        Shape{cols}, std::move(out), OpKind::kTakeRow, {x},
        [x = x, row, cols](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(x.numel(), S{0});
            for (std::size_t j = 0; j < cols; ++j) dx[row * cols + j] = self.grad[j];
            x.accumulate_grad(dx.data(), dx.size());
        });
}

// Stack rank-1 tensors of equal length into a [r x c] matrix.
template <class S>
TensorT<S> stack_rows(const std::vector<TensorT<S>>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: empty input");
    const std::size_t cols = rows[0].numel();
    for (const auto& r : rows) {
        detail::require_rank(r, 1, "stack_rows");
        if (r.numel() != cols) throw ShapeError("stack_rows: row length mismatch");
    }
    typename TensorT<S>::Buffer out(rows.size() * cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out.data() + i * cols, rows[i].data(), cols * sizeof(S));
    count_op(rows.size() * cols);
    return TensorT<S>::make_op_result(
        Shape{rows.size(), cols}, std::move(out), OpKind::kStackRows, rows,
        [rows = rows, cols](typename TensorT<S>::Node& self) mutable {
            for (std::size_t i = 0; i < rows.size(); ++i)
                rows[i].accumulate_grad(self.grad.data() + i * cols, cols);
        });
}

template <class S>
TensorT<S> concat_rows(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_rank(a, 2, "concat_rows");
    detail::require_rank(b, 2, "concat_rows");
    if (a.extent(1) != b.extent(1)) throw ShapeError("concat_rows: column mismatch");
    const std::size_t cols = a.extent(1);
    typename TensorT<S>::Buffer out(a.numel() + b.numel());
    std::memcpy(out.data(), a.data(), a.numel() * sizeof(S));
    std::memcpy(out.data() + a.numel(), b.data(), b.numel() * sizeof(S));
    count_op(out.size());
    return TensorT<S>::make_op_result(
        Shape{a.extent(0) + b.extent(0), cols}, std::move(out), OpKind::kConcatRows, {a, b},
        [a = a, b = b](typename TensorT<S>::Node& self) mutable {
            a.accumulate_grad(self.grad.data(), a.numel());
            b.accumulate_grad(self.grad.data() + a.numel(), b.numel());
        });
}

// Concatenate [r x c_i] blocks along columns.
template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    const std::size_t rows = parts[0].extent(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank(p, 2, "concat_cols");
        if (p.extent(0) != rows) throw ShapeError("concat_cols: row mismatch");
        total += p.extent(1);
    }
    typename TensorT<S>::Buffer out(rows * total);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.extent(1);
        for (std::size_t i = 0; i < rows; ++i)
            std::memcpy(out.data() + i * total + offset, p.data() + i * c, c * sizeof(S));
        offset += c;
    }
    count_op(out.size());
    return TensorT<S>::make_op_result(
        Shape{rows, total}, std::move(out), OpKind::kConcatCols, parts,
        [parts = parts, rows, total](typename TensorT<S>::Node& self) mutable {
            std::size_t offset = 0;
            for (auto& p : parts) {
                const std::size_t c = p.extent(1);
                std::vector<S> dp(rows * c);
                for (std::size_t i = 0; i < rows; ++i)
                    std::memcpy(dp.data() + i * c, self.grad.data() + i * total + offset,
                                c * sizeof(S));
                p.accumulate_grad(dp.data(), dp.size());
                offset += c;
            }
        });
}

template <class S>
TensorT<S> concat_vec(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_rank(a, 1, "concat_vec");
    detail::require_rank(b, 1, "concat_vec");
    typename TensorT<S>::Buffer out(a.numel() + b.numel());
    std::memcpy(out.data(), a.data(), a.numel() * sizeof(S));
    std::memcpy(out.data() + a.numel(), b.data(), b.numel() * sizeof(S));
    count_op(out.size());
    return TensorT<S>::make_op_result(
        Shape{a.numel() + b.numel()}, std::move(out), OpKind::kConcatVec, {a, b},
        [a = a, b = b](typename TensorT<S>::Node& self) mutable {
            a.accumulate_grad(self.grad.data(), a.numel());
            b.accumulate_grad(self.grad.data() + a.numel(), b.numel());
        });
}

// Column-wise max over rows; grad routes to the first argmax row.
template <class S>
TensorT<S> reduce_rows_max(const TensorT<S>& x) {
    detail::require_rank(x, 2, "reduce_rows_max");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    if (rows == 0) throw ShapeError("reduce_rows_max: no rows");
    typename TensorT<S>::Buffer out(cols);
    std::vector<std::size_t> arg(cols, 0);
    const S* px = x.data();
    for (std::size_t j = 0; j < cols; ++j) out[j] = px[j];
    for (std::size_t i = 1; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            if (px[i * cols + j] > out[j]) {
                out[j] = px[i * cols + j];
                arg[j] = i;
            }
    count_op(rows * cols);
    return TensorT<S>::make_op_result(
        Shape{cols}, std::move(out), OpKind::kReduceRowsMax, {x},
        [x = x, arg = std::move(arg), cols](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(x.numel(), S{0});
            for (std::size_t j = 0; j < cols; ++j) dx[arg[j] * cols + j] = self.grad[j];
            x.accumulate_grad(dx.data(), dx.size());
        });
}

template <class S>
TensorT<S> reduce_rows_mean(const TensorT<S>& x) {
    detail::require_rank(x, 2, "reduce_rows_mean");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    if (rows == 0) throw ShapeError("reduce_rows_mean: no rows");
    typename TensorT<S>::Buffer out(cols, S{0});
    const S* px = x.data();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j] += px[i * cols + j];
    for (std::size_t j = 0; j < cols; ++j) out[j] /= static_cast<S>(rows);
    count_op(rows * cols);
    return TensorT<S>::make_op_result(
        Shape{cols}, std::move(out), OpKind::kReduceRowsMean, {x},
        [x = x, rows, cols](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(x.numel());
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    dx[i * cols + j] = self.grad[j] / static_cast<S>(rows);
            x.accumulate_grad(dx.data(), dx.size());
        });
}

// Row-wise log(sum(exp(x))), max-stabilized.
template <class S>
TensorT<S> logsumexp_rows(const TensorT<S>& x) {
    detail::require_rank(x, 2, "logsumexp_rows");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    typename TensorT<S>::Buffer out(rows);
    std::vector<S> soft(rows * cols);
    const S* px = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = px + r * cols;
        S mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        S sum{0};
        for (std::size_t j = 0; j < cols; ++j) {
            soft[r * cols + j] = std::exp(row[j] - mx);
            sum += soft[r * cols + j];
        }
        for (std::size_t j = 0; j < cols; ++j) soft[r * cols + j] /= sum;
        out[r] = mx + std::log(sum);
    }
    count_op(5 * x.numel());
    return TensorT<S>::make_op_result(
        Shape{rows}, std::move(out), OpKind::kLogSumExpRows, {x},
        [x = x, soft = std::move(soft), rows, cols](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(rows * cols);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < cols; ++j)
                    dx[r * cols + j] = self.grad[r] * soft[r * cols + j];
            x.accumulate_grad(dx.data(), dx.size());
        });
}

template <class S>
TensorT<S> take_diagonal(const TensorT<S>& x) {
    detail::require_rank(x, 2, "take_diagonal");
    const std::size_t n = x.extent(0);
    if (x.extent(1) != n) throw ShapeError("take_diagonal: matrix not square");
    typename TensorT<S>::Buffer out(n);
    const S* px = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = px[i * n + i];
    count_op(n);
    return TensorT<S>::make_op_result(
        Shape{n}, std::move(out), OpKind::kTakeDiagonal, {x},
        [x = x, n](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(x.numel(), S{0});
            for (std::size_t i = 0; i < n; ++i) dx[i * n + i] = self.grad[i];
            x.accumulate_grad(dx.data(), dx.size());
        });
}

template <class S>
TensorT<S> sum_all(const TensorT<S>& x) {
    S acc{0};
    const S* px = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
    count_op(x.numel());
    typename TensorT<S>::Buffer out;
    out.push_back(acc);
    return TensorT<S>::make_op_result(Shape{}, std::move(out), OpKind::kSumAll, {x},
                                      [x = x](typename TensorT<S>::Node& self) mutable {
                                          std::vector<S> dx(x.numel(), self.grad[0]);
                                          x.accumulate_grad(dx.data(), dx.size());
                                      });
}

template <class S>
TensorT<S> mean_all(const TensorT<S>& x) {
    if (x.numel() == 0) throw ShapeError("mean_all: empty tensor");
    S acc{0};
    const S* px = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
    acc /= static_cast<S>(x.numel());
    count_op(x.numel());
    typename TensorT<S>::Buffer out;
    out.push_back(acc);
    return TensorT<S>::make_op_result(
        Shape{}, std::move(out), OpKind::kMeanAll, {x},
        [x = x](typename TensorT<S>::Node& self) mutable {
            std::vector<S> dx(x.numel(), self.grad[0] / static_cast<S>(x.numel()));
            x.accumulate_grad(dx.data(), dx.size());
        });
}

template <class S>
TensorT<S> dot(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_rank(a, 1, "dot");
    detail::require_rank(b, 1, "dot");
    detail::require_same_shape(a, b, "dot");
    S acc{0};
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < a.numel(); ++i) acc += pa[i] * pb[i];
    count_op(2 * a.numel());
    typename TensorT<S>::Buffer out;
    out.push_back(acc);
    return TensorT<S>::make_op_result(
        Shape{}, std::move(out), OpKind::kDot, {a, b},
        [a = a, b = b](typename TensorT<S>::Node& self) mutable {
            std::vector<S> tmp(a.numel());
            const S g = self.grad[0];
            const S* pb2 = b.data();
            for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = g * pb2[i];
            a.accumulate_grad(tmp.data(), tmp.size());
            const S* pa2 = a.data();
            for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = g * pa2[i];
            b.accumulate_grad(tmp.data(), tmp.size());
        });
}

// ---------------------------------------------------------------------------
// Flat binary tensor format: "GFKT", version u32, rank u32, extents u64[rank],
// little-endian f64 payload.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("tensor stream truncated");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("tensor stream truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

constexpr std::uint32_t kTensorFormatVersion = 1;

template <class S>
void save_tensor(std::ostream& os, const TensorT<S>& t) {
    os.write("GFKT", 4);
    detail::write_u32(os, kTensorFormatVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::write_u64(os, e);
    const S* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) detail::write_f64(os, static_cast<double>(p[i]));
    if (!os) throw IoError("tensor write failed");
}

template <class S = double>
TensorT<S> load_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GFKT", 4) != 0) throw IoError("bad tensor magic");
    const std::uint32_t version = detail::read_u32(is);
    if (version != kTensorFormatVersion)
        throw IoError("unsupported tensor format version " + std::to_string(version));
    const std::uint32_t rank = detail::read_u32(is);
    if (rank > 8) throw IoError("implausible tensor rank");
    Shape shape(rank);
    for (auto& e : shape) e = detail::read_u64(is);
    const std::size_t n = shape_numel(shape);
    std::vector<S> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<S>(detail::read_f64(is));
    return TensorT<S>::from_data(std::move(shape), values);
}

// ---------------------------------------------------------------------------
// Central-difference gradient verification. f must be deterministic; the
// maximum relative error over all parameter entries is returned, with
// denominator max(|analytic|, |numeric|, 1e-8).
// ---------------------------------------------------------------------------

template <class S>
double finite_diff_check(const std::function<TensorT<S>()>& f, std::vector<TensorT<S>> params,
                         double eps) {
    if (eps <= 0) throw ContractError("finite_diff_check: eps must be positive");
    {
        NoGradGuard ng;
        const double a = static_cast<double>(f().value());
        const double b = static_cast<double>(f().value());
        if (std::memcmp(&a, &b, sizeof(double)) != 0)
            throw DeterminismError("finite_diff_check: f is not deterministic");
    }
    for (auto& p : params) p.zero_grad();
    TensorT<S> loss = f();
    if (loss.numel() != 1) throw ContractError("finite_diff_check: f must return a scalar");
    loss.backward();

    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params)
        analytic.emplace_back(p.grad(), p.grad() + p.numel());

    double max_rel = 0.0;
    NoGradGuard ng;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        S* data = p.data();
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const S orig = data[i];
            data[i] = orig + static_cast<S>(eps);
            const double fp = static_cast<double>(f().value());
            data[i] = orig - static_cast<S>(eps);
            const double fm = static_cast<double>(f().value());
            data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = static_cast<double>(analytic[pi][i]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace gfkit
