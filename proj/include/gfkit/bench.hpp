#pragma once

#include <chrono>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfkit/model.hpp"
#include "gfkit/rng.hpp"
#include "gfkit/training.hpp"

namespace gfkit {

struct BenchRow {
    std::string mode;  // "nested" or "cascaded"
    int n_neighbors = 0;
    int batch = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
    double peak_mib = 0.0;
};

struct LinearFit {
    double alpha = 0.0;
    double beta = 0.0;
    double r2 = 0.0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    LinearFit nested_fit, cascaded_fit;
    std::vector<int> neighbor_sizes;
    std::vector<double> overhead_ratio;  // nested mean / cascaded mean per size
    int reps_used = 0;
};

namespace detail {

inline double timer_resolution_ms() {
    using clock = std::chrono::steady_clock;
    double best = 1e9;
    for (int i = 0; i < 16; ++i) {
        auto t0 = clock::now();
        auto t1 = clock::now();
        while (t1 == t0) t1 = clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

inline LinearFit fit_line(const std::vector<int>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += static_cast<double>(xs[i]) * xs[i];
        sxy += xs[i] * ys[i];
    }
    LinearFit fit;
    fit.beta = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    fit.alpha = (sy - fit.beta * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean = sy / n;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double pred = fit.alpha + fit.beta * xs[i];
        ss_res += (ys[i] - pred) * (ys[i] - pred);
        ss_tot += (ys[i] - mean) * (ys[i] - mean);
    }
    fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

// One training-shaped mini-batch: encode all instances, a self-contrastive
// scalar head, full backward. Returns wall milliseconds.
inline double bench_rep(const std::vector<GraphInput>& inputs, ParamSet& params,
                        const ModelConfig& cfg, Aggregator agg) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor emb = encode_batch(inputs, params, cfg, agg);
    Tensor loss = inbatch_contrastive_loss(emb, emb);
    loss.backward();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    for (auto& [name, t] : params.named_tensors()) t.zero_grad();
    return ms;
}

}  // namespace detail

// Wall time and allocator high-water memory per training-shaped mini-batch,
// nested vs cascaded (pooling-max) encoding, as the neighbour count grows.
// Inputs are pre-materialized; one warm-up repetition is excluded; reps are
// doubled automatically while the timer cannot resolve a repetition into
// at least 100 ticks.
inline BenchReport bench_scaling(const ModelConfig& base_cfg, const ParamSet& params,
                                 const std::vector<int>& neighbor_sizes, int batch, int reps,
                                 std::uint64_t seed) {
    if (neighbor_sizes.empty()) throw ContractError("bench_scaling: no neighbour sizes");
    if (batch < 1 || reps < 1) throw ContractError("bench_scaling: batch and reps must be >= 1");
    if (!params.pool.defined())
        throw ContractError("bench_scaling: cascaded mode needs the pooling head");

    ModelConfig cfg = base_cfg;
    cfg.max_neighbors = *std::max_element(neighbor_sizes.begin(), neighbor_sizes.end());
    cfg.validate();
    ParamSet bench_params = params.clone();  // grads stay local to the benchmark

    Rng rng(derive_seed(seed, "bench_inputs"));
    auto make_instance = [&](int n_neighbors) {
        auto seq = [&]() {
            std::vector<std::int32_t> s(static_cast<std::size_t>(cfg.max_tokens));
            s[0] = kClsTokenId;
            for (std::size_t i = 1; i < s.size(); ++i)
                s[i] = kUnkTokenId + 1 +
                       static_cast<std::int32_t>(
                           rng.below(static_cast<std::uint64_t>(cfg.vocab) - kUnkTokenId - 1));
            return s;
        };
        GraphInput input;
        input.center = seq();
        for (int g = 0; g < n_neighbors; ++g) input.neighbors.push_back(seq());
        return input;
    };

    std::vector<std::vector<GraphInput>> batches;
    for (int n : neighbor_sizes) {
        std::vector<GraphInput> b;
        for (int i = 0; i < batch; ++i) b.push_back(make_instance(n));
        batches.push_back(std::move(b));
    }

    const double resolution = detail::timer_resolution_ms();
    BenchReport report;
    report.neighbor_sizes = neighbor_sizes;

    struct ModeSpec {
        const char* name;
        Aggregator agg;
    };
    const ModeSpec modes[] = {{"nested", Aggregator::kNested}, {"cascaded", Aggregator::kMax}};

    std::vector<double> means[2];
    for (int m = 0; m < 2; ++m) {
        for (std::size_t si = 0; si < neighbor_sizes.size(); ++si) {
            int use_reps = reps;
            std::vector<double> times;
            double peak_mib = 0.0;
            for (;;) {
                times.clear();
                (void)detail::bench_rep(batches[si], bench_params, cfg, modes[m].agg);  // warm-up
                for (int r = 0; r < use_reps; ++r) {
                    MemTracker::instance().reset_peak();
                    times.push_back(detail::bench_rep(batches[si], bench_params, cfg, modes[m].agg));
                    const double mib = static_cast<double>(MemTracker::instance().peak_bytes() -
                                                           MemTracker::instance().current_bytes()) /
                                       (1024.0 * 1024.0);
                    peak_mib = std::max(peak_mib, mib);
                }
                double mean = 0.0;
                for (double t : times) mean += t;
                mean /= static_cast<double>(times.size());
                if (mean >= 100.0 * resolution || use_reps >= 256) break;
                use_reps *= 2;
            }
            double mean = 0.0;
            for (double t : times) mean += t;
            mean /= static_cast<double>(times.size());
            double var = 0.0;
            for (double t : times) var += (t - mean) * (t - mean);
            const double stdev = times.size() > 1 ? std::sqrt(var / (times.size() - 1)) : 0.0;

            BenchRow row;
            row.mode = modes[m].name;
            row.n_neighbors = neighbor_sizes[si];
            row.batch = batch;
            row.mean_ms = mean;
            row.std_ms = stdev;
            row.peak_mib = peak_mib;
            report.rows.push_back(row);
            means[m].push_back(mean);
            report.reps_used = std::max(report.reps_used, static_cast<int>(times.size()));
        }
    }

    report.nested_fit = detail::fit_line(neighbor_sizes, means[0]);
    report.cascaded_fit = detail::fit_line(neighbor_sizes, means[1]);
    for (std::size_t i = 0; i < neighbor_sizes.size(); ++i)
        report.overhead_ratio.push_back(means[0][i] / means[1][i]);
    return report;
}

inline std::string bench_to_csv(const BenchReport& report) {
    std::string out = "mode,n_neighbours,batch,mean_ms,std_ms,peak_mib\n";
    char buf[200];
    for (const auto& row : report.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.3f,%.3f,%.3f\n", row.mode.c_str(),
                      row.n_neighbors, row.batch, row.mean_ms, row.std_ms, row.peak_mib);
        out += buf;
    }
    return out;
}

inline nlohmann::json bench_fit_to_json(const BenchReport& report) {
    nlohmann::json ratios = nlohmann::json::array();
    for (std::size_t i = 0; i < report.neighbor_sizes.size(); ++i)
        ratios.push_back({{"n_neighbours", report.neighbor_sizes[i]},
                          {"nested_over_cascaded", report.overhead_ratio[i]}});
    return nlohmann::json{
        {"nested", {{"alpha_ms", report.nested_fit.alpha},
                    {"beta_ms_per_neighbour", report.nested_fit.beta},
                    {"r2", report.nested_fit.r2}}},
        {"cascaded", {{"alpha_ms", report.cascaded_fit.alpha},
                      {"beta_ms_per_neighbour", report.cascaded_fit.beta},
                      {"r2", report.cascaded_fit.r2}}},
        {"overhead_ratios", ratios},
        {"reps_used", report.reps_used}};
}

}  // namespace gfkit
