#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfkit/data.hpp"
#include "gfkit/model.hpp"

namespace gfkit {

struct RankMetrics {
    double p_at_1 = 0.0;
    double ndcg = 0.0;
    double mrr = 0.0;
    std::size_t rank = 0;
};

// Rank of the positive under descending score with pessimistic ties (the
// positive is placed after equal-scored negatives). Single relevant item, so
// NDCG reduces to 1/log2(rank+1).
inline RankMetrics rank_metrics(const std::vector<double>& scores, std::size_t positive_index) {
    if (scores.size() < 2) throw ContractError("rank_metrics: need at least 2 candidates");
    if (positive_index >= scores.size()) throw RangeError("rank_metrics: positive index out of range");
    for (double s : scores)
        if (!std::isfinite(s)) throw NonFiniteError("rank_metrics: non-finite score");

    const double pos = scores[positive_index];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (j == positive_index) continue;
        if (scores[j] >= pos) ++rank;
    }
    RankMetrics m;
    m.rank = rank;
    m.p_at_1 = rank == 1 ? 1.0 : 0.0;
    m.mrr = 1.0 / static_cast<double>(rank);
    m.ndcg = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    return m;
}

struct RankReport {
    double p_at_1 = 0.0;
    double ndcg = 0.0;
    double mrr = 0.0;
    std::size_t instances = 0;
    std::vector<std::size_t> ranks;  // filled when requested
};

using EncodeFn = std::function<std::vector<double>(const GraphInput&)>;

// Score every candidate against the query by inner product and average the
// ranking metrics over instances.
inline RankReport evaluate_model(const EncodeFn& encode, const std::vector<EvalInstance>& instances,
                                 bool keep_ranks = false) {
    RankReport report;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        try {
            const EvalInstance& inst = instances[i];
            const std::vector<double> q = encode(inst.query);
            std::vector<double> scores;
            scores.reserve(inst.candidates.size());
            for (const auto& cand : inst.candidates) {
                const std::vector<double> c = encode(cand);
                if (c.size() != q.size())
                    throw ShapeError("candidate embedding size mismatch");
                double s = 0.0;
                for (std::size_t t = 0; t < q.size(); ++t) s += q[t] * c[t];
                scores.push_back(s);
            }
            const RankMetrics m = rank_metrics(scores, inst.positive_index);
            report.p_at_1 += m.p_at_1;
            report.ndcg += m.ndcg;
            report.mrr += m.mrr;
            if (keep_ranks) report.ranks.push_back(m.rank);
            ++report.instances;
        } catch (const std::exception& e) {
            throw std::runtime_error("evaluate_model: instance " + std::to_string(i) + ": " +
                                     e.what());
        }
    }
    if (report.instances > 0) {
        report.p_at_1 /= static_cast<double>(report.instances);
        report.ndcg /= static_cast<double>(report.instances);
        report.mrr /= static_cast<double>(report.instances);
    }
    return report;
}

// Embedding closure for a trained model. The caches (owned by the caller)
// make repeated candidates cheap; both are inference-only.
inline EncodeFn make_encoder(const ParamSet& params, const ModelConfig& cfg, Aggregator aggregator,
                             NeighborCache* neighbor_cache = nullptr,
                             TextEmbedCache* text_cache = nullptr) {
    return [&params, cfg, aggregator, neighbor_cache, text_cache](const GraphInput& input) {
        NoGradGuard ng;
        Tensor z = aggregator == Aggregator::kNested
                       ? encode_graph(input, params, cfg,
                                      cfg.mode == EncodeMode::kUnidirectional ? neighbor_cache
                                                                              : nullptr)
                       : cascaded_encode(input, params, cfg, aggregator, text_cache);
        return std::vector<double>(z.data(), z.data() + z.numel());
    };
}

inline std::string report_to_csv(const RankReport& report) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "p_at_1,ndcg,mrr,instances\n%.6f,%.6f,%.6f,%zu\n",
                  report.p_at_1, report.ndcg, report.mrr, report.instances);
    return buf;
}

inline nlohmann::json report_to_json(const RankReport& report) {
    nlohmann::json j{{"p_at_1", report.p_at_1},
                     {"ndcg", report.ndcg},
                     {"mrr", report.mrr},
                     {"instances", report.instances}};
    if (!report.ranks.empty()) j["ranks"] = report.ranks;
    return j;
}

}  // namespace gfkit
