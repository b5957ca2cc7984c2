#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "gfkit/data.hpp"
#include "gfkit/model.hpp"
#include "gfkit/rng.hpp"

namespace gfkit {

// Link-prediction loss with in-batch negatives: row i of k_emb is the
// positive for row i of q_emb, every other row serves as a negative. Raw
// inner products, no temperature, stabilized per row.
inline Tensor inbatch_contrastive_loss(const Tensor& q_emb, const Tensor& k_emb) {
    if (q_emb.rank() != 2 || k_emb.rank() != 2 || q_emb.shape() != k_emb.shape())
        throw ShapeError("inbatch_contrastive_loss: embeddings must be matching [B x d]");
    if (q_emb.extent(0) == 0) throw ContractError("inbatch_contrastive_loss: empty batch");
    Tensor scores = matmul(q_emb, transpose(k_emb));
    return mean_all(sub(logsumexp_rows(scores), take_diagonal(scores)));
}

// ---------------------------------------------------------------------------
// Token pollution (dynamic masking)
// ---------------------------------------------------------------------------

struct PollutionStats {
    std::uint64_t tokens_seen = 0;
    std::uint64_t tokens_masked = 0;
    std::uint64_t to_mask = 0;
    std::uint64_t to_random = 0;
    std::uint64_t to_kept = 0;

    void merge(const PollutionStats& other) {
        tokens_seen += other.tokens_seen;
        tokens_masked += other.tokens_masked;
        to_mask += other.to_mask;
        to_random += other.to_random;
        to_kept += other.to_kept;
    }
};

struct PollutionConfig {
    double rate = 0.15;
    double mask_fraction = 0.8;
    double random_fraction = 0.1;  // the remainder keeps the original token
    std::int32_t vocab = 0;
    std::int32_t mask_id = kMaskTokenId;

    void validate() const {
        if (vocab <= kUnkTokenId + 1)
            throw ConfigError("pollution: vocabulary too small for random replacement");
        if (mask_id < 0 || mask_id >= vocab)
            throw ConfigError("pollution: vocabulary lacks a [MASK] id");
        if (rate < 0.0 || rate > 1.0) throw ConfigError("pollution: rate must be in [0, 1]");
        if (mask_fraction < 0.0 || random_fraction < 0.0 ||
            mask_fraction + random_fraction > 1.0)
            throw ConfigError("pollution: branch fractions must be within [0, 1]");
    }
};

// Each eligible token (never position 0, never padding) is independently
// selected with probability rate; selected tokens go to [MASK], a random
// vocabulary word, or stay unchanged per the branch fractions.
inline std::pair<std::vector<std::int32_t>, PollutionStats> pollute_tokens(
    const std::vector<std::int32_t>& tokens, const PollutionConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<std::int32_t> out = tokens;
    PollutionStats stats;
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (out[i] == kPadTokenId) continue;
        ++stats.tokens_seen;
        if (!rng.bernoulli(cfg.rate)) continue;
        ++stats.tokens_masked;
        const double u = rng.uniform();
        if (u < cfg.mask_fraction) {
            out[i] = cfg.mask_id;
            ++stats.to_mask;
        } else if (u < cfg.mask_fraction + cfg.random_fraction) {
            out[i] = kUnkTokenId + 1 +
                     static_cast<std::int32_t>(
                         rng.below(static_cast<std::uint64_t>(cfg.vocab - kUnkTokenId - 1)));
            ++stats.to_random;
        } else {
            ++stats.to_kept;
        }
    }
    return {std::move(out), stats};
}

inline GraphInput pollute_graph_input(const GraphInput& input, const PollutionConfig& cfg,
                                      Rng& rng, PollutionStats* stats = nullptr) {
    GraphInput out = input;
    auto apply = [&](std::vector<std::int32_t>& tokens) {
        auto [polluted, st] = pollute_tokens(tokens, cfg, rng);
        tokens = std::move(polluted);
        if (stats) stats->merge(st);
    };
    apply(out.center);
    for (auto& nb : out.neighbors) apply(nb);
    return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    long long step = 0;
};

// One Adam update with bias correction; parameters change in place and grads
// are zeroed afterwards. Non-finite gradients abort with the tensor name.
inline void optimizer_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
                           const AdamConfig& cfg) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].second.numel(), 0.0);
            state.v[i].assign(params[i].second.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw ContractError("optimizer_step: state does not mirror the parameter list");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].second;
        double* g = t.grad();
        double* x = t.data();
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (std::size_t j = 0; j < t.numel(); ++j) {
            if (!std::isfinite(g[j]))
                throw NonFiniteError("non-finite gradient in " + params[i].first + " at step " +
                                     std::to_string(state.step));
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            x[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        t.zero_grad();
    }
}

inline void optimizer_step(ParamSet& params, AdamState& state, const AdamConfig& cfg) {
    auto named = params.named_tensors();
    optimizer_step(named, state, cfg);
    params.bump_revision();
}

// ---------------------------------------------------------------------------
// Two-stage progressive training
// ---------------------------------------------------------------------------

struct StageConfig {
    int max_steps = 400;
    int patience = 3;  // evaluations without improvement before stopping
};

struct TrainSchedule {
    StageConfig stage1;  // polluted inputs
    StageConfig stage2;  // clean inputs
    double lr = 1e-3;
    int batch_size = 16;
    std::uint64_t seed = 0;
    int eval_interval = 25;
    double min_delta = 1e-3;
    int valid_limit = 256;        // pairs used per validation pass
    int checkpoint_interval = 0;  // steps; 0 disables periodic checkpoints

    void validate() const {
        if (batch_size < 2)
            throw ConfigError("train.batch_size must be >= 2 (one pair has no negatives)");
        if (eval_interval < 1) throw ConfigError("train.eval_interval must be >= 1");
        if (stage1.max_steps < 0 || stage2.max_steps < 0)
            throw ConfigError("train stage step caps must be >= 0");
    }
};

struct LinkDataset {
    const TextGraph* graph = nullptr;
    std::vector<TrainPair> train;
    std::vector<TrainPair> valid;
};

struct TrainOptions {
    Aggregator aggregator = Aggregator::kNested;
    // called at checkpoint intervals and at each stage end
    std::function<void(int stage, int step, const ParamSet&)> checkpoint_hook;
    std::ostream* log_stream = nullptr;  // CSV rows: stage,step,split,loss,wall_ms
};

struct TrainLogRow {
    int stage = 0;
    int step = 0;
    std::string split;
    double loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    int stage1_steps = 0;
    int stage2_steps = 0;
    std::uint64_t stage1_end_hash = 0;
    std::uint64_t final_hash = 0;
};

namespace detail {

inline void emit_log_row(TrainResult& result, const TrainOptions& opts, TrainLogRow row) {
    if (opts.log_stream) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%d,%d,%s,%.17g,%.3f\n", row.stage, row.step,
                      row.split.c_str(), row.loss, row.wall_ms);
        (*opts.log_stream) << buf;
    }
    result.log.push_back(std::move(row));
}

struct BatchInputs {
    std::vector<GraphInput> queries, keys;
};

inline BatchInputs assemble_batch(const LinkDataset& data, const std::vector<std::size_t>& order,
                                  std::size_t cursor, int batch_size, const ModelConfig& cfg) {
    BatchInputs batch;
    for (int b = 0; b < batch_size; ++b) {
        const TrainPair& pair = data.train[order[(cursor + b) % order.size()]];
        batch.queries.push_back(
            make_graph_input(*data.graph, pair.q, pair.q_neighbors, cfg.max_tokens));
        batch.keys.push_back(
            make_graph_input(*data.graph, pair.k, pair.k_neighbors, cfg.max_tokens));
    }
    return batch;
}

inline double batch_loss_value(const BatchInputs& batch, const ParamSet& params,
                               const ModelConfig& cfg, Aggregator agg) {
    NoGradGuard ng;
    Tensor q = encode_batch(batch.queries, params, cfg, agg);
    Tensor k = encode_batch(batch.keys, params, cfg, agg);
    return inbatch_contrastive_loss(q, k).value();
}

// Mean loss over (a capped number of) validation pairs; stage-1 pollution is
// re-applied with a fixed seed so successive evaluations are comparable.
inline double validation_loss(const LinkDataset& data, const ParamSet& params,
                              const ModelConfig& cfg, const TrainSchedule& sched,
                              const TrainOptions& opts, bool polluted,
                              const PollutionConfig& pollution) {
    const std::size_t limit =
        std::min<std::size_t>(data.valid.size(), static_cast<std::size_t>(sched.valid_limit));
    if (limit == 0) return 0.0;
    Rng prng(derive_seed(sched.seed, "valid_pollution"));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < limit; start += sched.batch_size) {
        BatchInputs batch;
        const std::size_t end = std::min(limit, start + sched.batch_size);
        if (end - start < 2) break;  // a single pair has no negatives
        for (std::size_t i = start; i < end; ++i) {
            const TrainPair& pair = data.valid[i];
            GraphInput q = make_graph_input(*data.graph, pair.q, pair.q_neighbors, cfg.max_tokens);
            GraphInput k = make_graph_input(*data.graph, pair.k, pair.k_neighbors, cfg.max_tokens);
            if (polluted) {
                q = pollute_graph_input(q, pollution, prng);
                k = pollute_graph_input(k, pollution, prng);
            }
            batch.queries.push_back(std::move(q));
            batch.keys.push_back(std::move(k));
        }
        total += batch_loss_value(batch, params, cfg, opts.aggregator);
        ++batches;
    }
    return batches ? total / static_cast<double>(batches) : 0.0;
}

}  // namespace detail

// Stage 1 minimizes the polluted-input loss until convergence (no validation
// improvement beyond min_delta for `patience` evaluations) or the step cap;
// stage 2 continues from the same parameters on clean inputs. A schedule
// with zero stage-1 steps is the single-stage baseline.
inline TrainResult train_two_stage(const ModelConfig& cfg, ParamSet& params,
                                   const LinkDataset& data, const TrainSchedule& sched,
                                   const TrainOptions& opts = {}) {
    cfg.validate();
    sched.validate();
    if (!data.graph) throw ContractError("train_two_stage: dataset has no graph");
    if (data.train.empty()) throw ContractError("train_two_stage: no training pairs");

    PollutionConfig pollution;
    pollution.vocab = cfg.vocab;

    AdamState adam;
    AdamConfig adam_cfg;
    adam_cfg.lr = sched.lr;

    TrainResult result;
    int global_step = 0;

    auto run_stage = [&](int stage, const StageConfig& stage_cfg, bool polluted) -> int {
        int steps_done = 0;
        if (stage_cfg.max_steps == 0) return 0;

        std::vector<std::size_t> order(data.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(sched.seed, "shuffle", static_cast<std::uint64_t>(stage)));
        shuffle_rng.shuffle(order);

        double best_valid = std::numeric_limits<double>::infinity();
        int stall = 0;
        double initial_loss = -1.0;
        int divergent_streak = 0;
        std::size_t cursor = 0;

        for (int step = 1; step <= stage_cfg.max_steps; ++step) {
            const auto t0 = std::chrono::steady_clock::now();
            detail::BatchInputs batch =
                detail::assemble_batch(data, order, cursor, sched.batch_size, cfg);
            cursor += static_cast<std::size_t>(sched.batch_size);
            if (cursor >= order.size()) {
                cursor = 0;
                shuffle_rng.shuffle(order);
            }
            if (polluted) {
                Rng prng(derive_seed(sched.seed, "pollute", static_cast<std::uint64_t>(global_step)));
                for (auto& q : batch.queries) q = pollute_graph_input(q, pollution, prng);
                for (auto& k : batch.keys) k = pollute_graph_input(k, pollution, prng);
            }

            Tensor q_emb = encode_batch(batch.queries, params, cfg, opts.aggregator);
            Tensor k_emb = encode_batch(batch.keys, params, cfg, opts.aggregator);
            Tensor loss = inbatch_contrastive_loss(q_emb, k_emb);
            loss.backward();
            optimizer_step(params, adam, adam_cfg);

            const double loss_value = loss.value();
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            detail::emit_log_row(result, opts, {stage, step, "train", loss_value, wall_ms});
            ++global_step;
            ++steps_done;

            if (initial_loss < 0) initial_loss = std::max(loss_value, 1e-6);
            divergent_streak = loss_value > 10.0 * initial_loss ? divergent_streak + 1 : 0;
            if (divergent_streak >= 100)
                throw DivergenceError("training diverged: loss above 10x initial for 100 steps");

            if (opts.checkpoint_hook && sched.checkpoint_interval > 0 &&
                step % sched.checkpoint_interval == 0)
                opts.checkpoint_hook(stage, step, params);

            if (step % sched.eval_interval == 0 && !data.valid.empty()) {
                const auto v0 = std::chrono::steady_clock::now();
                const double vloss = detail::validation_loss(data, params, cfg, sched, opts,
                                                             polluted, pollution);
                const double vms = std::chrono::duration<double, std::milli>(
                                       std::chrono::steady_clock::now() - v0)
                                       .count();
                detail::emit_log_row(result, opts, {stage, step, "valid", vloss, vms});
                if (best_valid - vloss > sched.min_delta) {
                    best_valid = vloss;
                    stall = 0;
                } else if (++stall >= stage_cfg.patience) {
                    break;
                }
            }
        }
        if (opts.checkpoint_hook) opts.checkpoint_hook(stage, steps_done, params);
        return steps_done;
    };

    result.stage1_steps = run_stage(1, sched.stage1, /*polluted=*/true);
    result.stage1_end_hash = params.version_hash(cfg);
    result.stage2_steps = run_stage(2, sched.stage2, /*polluted=*/false);
    result.final_hash = params.version_hash(cfg);
    return result;
}

}  // namespace gfkit
