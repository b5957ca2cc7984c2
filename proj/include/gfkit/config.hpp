#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfkit/data.hpp"
#include "gfkit/io.hpp"
#include "gfkit/model.hpp"
#include "gfkit/training.hpp"

namespace gfkit {

struct EvalOptions {
    int n_neg = 99;
    int neighbor_cap = 5;
    bool exclude_adjacent = true;
    int max_instances = 1000;  // 0 = every test edge
    bool dump_ranks = false;
};

struct BenchOptions {
    std::vector<int> neighbor_sizes = {3, 5, 10, 20, 50};
    int batch = 8;
    int reps = 5;
};

struct TrainRunOptions {
    Aggregator aggregator = Aggregator::kNested;
    bool two_stage = true;
    int sample_k = 5;
    bool both_orientations = false;
    NaivePairMode naive_mode = NaivePairMode::kRedraw;
};

// Merged view of every module's configuration; defaults < GFK_SEED < config
// file < command-line flags. The resolved form is echoed into the output
// directory for provenance.
struct RunConfig {
    ModelConfig model;
    SynthConfig data;
    TrainSchedule schedule;
    TrainRunOptions train;
    EvalOptions eval;
    BenchOptions bench;
    std::uint64_t seed = 0;
    std::string out_dir = "run_out";

    void validate() const {
        model.validate();
        data.validate();
        schedule.validate();
        if (model.vocab != data.vocab)
            throw ConfigError("model.vocab and data.vocab must agree (" +
                              std::to_string(model.vocab) + " vs " + std::to_string(data.vocab) +
                              ")");
    }
};

namespace detail {

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

struct KeyHandler {
    std::string name;
    std::function<void(const nlohmann::json&, const std::string& path)> apply;
};

inline void apply_section(const nlohmann::json& j, const std::string& path,
                          const std::vector<KeyHandler>& handlers) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        const KeyHandler* found = nullptr;
        for (const auto& h : handlers)
            if (h.name == key) {
                found = &h;
                break;
            }
        if (!found) {
            std::string msg = "unknown key '" + path + key + "'";
            std::size_t best = 4;
            const KeyHandler* suggestion = nullptr;
            for (const auto& h : handlers) {
                const std::size_t d = edit_distance(key, h.name);
                if (d < best) {
                    best = d;
                    suggestion = &h;
                }
            }
            if (suggestion) msg += "; did you mean '" + path + suggestion->name + "'?";
            msg += " (valid keys:";
            for (const auto& h : handlers) msg += " " + h.name;
            msg += ")";
            throw ConfigError(msg);
        }
        found->apply(value, path + key);
    }
}

inline int get_int(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number_integer())
        throw ConfigError(path + ": expected an integer, got " + std::string(v.type_name()));
    return v.get<int>();
}

inline double get_double(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number())
        throw ConfigError(path + ": expected a number, got " + std::string(v.type_name()));
    return v.get<double>();
}

inline bool get_bool(const nlohmann::json& v, const std::string& path) {
    if (!v.is_boolean())
        throw ConfigError(path + ": expected a boolean, got " + std::string(v.type_name()));
    return v.get<bool>();
}

inline std::string get_string(const nlohmann::json& v, const std::string& path) {
    if (!v.is_string())
        throw ConfigError(path + ": expected a string, got " + std::string(v.type_name()));
    return v.get<std::string>();
}

}  // namespace detail

inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
    using detail::get_bool;
    using detail::get_double;
    using detail::get_int;
    using detail::get_string;
    using detail::KeyHandler;

    const std::vector<KeyHandler> model_keys = {
        {"layers", [&](const auto& v, const auto& p) { cfg.model.layers = get_int(v, p); }},
        {"dim", [&](const auto& v, const auto& p) { cfg.model.dim = get_int(v, p); }},
        {"heads", [&](const auto& v, const auto& p) { cfg.model.heads = get_int(v, p); }},
        {"max_tokens", [&](const auto& v, const auto& p) { cfg.model.max_tokens = get_int(v, p); }},
        {"max_neighbors",
         [&](const auto& v, const auto& p) { cfg.model.max_neighbors = get_int(v, p); }},
        {"vocab", [&](const auto& v, const auto& p) { cfg.model.vocab = get_int(v, p); }},
        {"share_gnn", [&](const auto& v, const auto& p) { cfg.model.share_gnn = get_bool(v, p); }},
        {"relation_bias",
         [&](const auto& v, const auto& p) { cfg.model.relation_bias = get_bool(v, p); }},
        {"mode", [&](const auto& v, const auto& p) {
             cfg.model.mode = encode_mode_from_string(get_string(v, p));
         }},
    };
    const std::vector<KeyHandler> data_keys = {
        {"nodes",
         [&](const auto& v, const auto& p) { cfg.data.n_nodes = static_cast<std::size_t>(get_int(v, p)); }},
        {"clusters",
         [&](const auto& v, const auto& p) { cfg.data.clusters = static_cast<std::size_t>(get_int(v, p)); }},
        {"vocab", [&](const auto& v, const auto& p) { cfg.data.vocab = get_int(v, p); }},
        {"tokens_per_node",
         [&](const auto& v, const auto& p) { cfg.data.tokens_per_node = get_int(v, p); }},
        {"rho", [&](const auto& v, const auto& p) { cfg.data.rho = get_double(v, p); }},
        {"p_in", [&](const auto& v, const auto& p) { cfg.data.p_in = get_double(v, p); }},
        {"p_out", [&](const auto& v, const auto& p) { cfg.data.p_out = get_double(v, p); }},
        {"heterogeneous",
         [&](const auto& v, const auto& p) { cfg.data.heterogeneous = get_bool(v, p); }},
        {"relation_types",
         [&](const auto& v, const auto& p) { cfg.data.relation_types = get_int(v, p); }},
    };
    const std::vector<KeyHandler> train_keys = {
        {"stage1_max_steps",
         [&](const auto& v, const auto& p) { cfg.schedule.stage1.max_steps = get_int(v, p); }},
        {"stage1_patience",
         [&](const auto& v, const auto& p) { cfg.schedule.stage1.patience = get_int(v, p); }},
        {"stage2_max_steps",
         [&](const auto& v, const auto& p) { cfg.schedule.stage2.max_steps = get_int(v, p); }},
        {"stage2_patience",
         [&](const auto& v, const auto& p) { cfg.schedule.stage2.patience = get_int(v, p); }},
        {"lr", [&](const auto& v, const auto& p) { cfg.schedule.lr = get_double(v, p); }},
        {"batch_size",
         [&](const auto& v, const auto& p) { cfg.schedule.batch_size = get_int(v, p); }},
        {"eval_interval",
         [&](const auto& v, const auto& p) { cfg.schedule.eval_interval = get_int(v, p); }},
        {"min_delta",
         [&](const auto& v, const auto& p) { cfg.schedule.min_delta = get_double(v, p); }},
        {"valid_limit",
         [&](const auto& v, const auto& p) { cfg.schedule.valid_limit = get_int(v, p); }},
        {"checkpoint_interval",
         [&](const auto& v, const auto& p) { cfg.schedule.checkpoint_interval = get_int(v, p); }},
        {"aggregator", [&](const auto& v, const auto& p) {
             cfg.train.aggregator = aggregator_from_string(get_string(v, p));
         }},
        {"stages", [&](const auto& v, const auto& p) {
             const std::string s = get_string(v, p);
             if (s == "two") cfg.train.two_stage = true;
             else if (s == "one") cfg.train.two_stage = false;
             else throw ConfigError(p + ": expected \"one\" or \"two\"");
         }},
        {"sample_k", [&](const auto& v, const auto& p) { cfg.train.sample_k = get_int(v, p); }},
        {"both_orientations",
         [&](const auto& v, const auto& p) { cfg.train.both_orientations = get_bool(v, p); }},
        {"naive_mode", [&](const auto& v, const auto& p) {
             const std::string s = get_string(v, p);
             if (s == "drop") cfg.train.naive_mode = NaivePairMode::kDrop;
             else if (s == "redraw") cfg.train.naive_mode = NaivePairMode::kRedraw;
             else throw ConfigError(p + ": expected \"drop\" or \"redraw\"");
         }},
    };
    const std::vector<KeyHandler> eval_keys = {
        {"n_neg", [&](const auto& v, const auto& p) { cfg.eval.n_neg = get_int(v, p); }},
        {"neighbor_cap",
         [&](const auto& v, const auto& p) { cfg.eval.neighbor_cap = get_int(v, p); }},
        {"exclude_adjacent",
         [&](const auto& v, const auto& p) { cfg.eval.exclude_adjacent = get_bool(v, p); }},
        {"max_instances",
         [&](const auto& v, const auto& p) { cfg.eval.max_instances = get_int(v, p); }},
        {"dump_ranks",
         [&](const auto& v, const auto& p) { cfg.eval.dump_ranks = get_bool(v, p); }},
    };
    const std::vector<KeyHandler> bench_keys = {
        {"neighbor_sizes",
         [&](const auto& v, const auto& p) {
             if (!v.is_array()) throw ConfigError(p + ": expected an array of integers");
             cfg.bench.neighbor_sizes.clear();
             for (const auto& e : v) cfg.bench.neighbor_sizes.push_back(get_int(e, p));
         }},
        {"batch", [&](const auto& v, const auto& p) { cfg.bench.batch = get_int(v, p); }},
        {"reps", [&](const auto& v, const auto& p) { cfg.bench.reps = get_int(v, p); }},
    };

    const std::vector<KeyHandler> top_keys = {
        {"seed", [&](const auto& v, const auto& p) {
             cfg.seed = static_cast<std::uint64_t>(get_int(v, p));
         }},
        {"out_dir", [&](const auto& v, const auto& p) { cfg.out_dir = get_string(v, p); }},
        {"model", [&](const auto& v, const auto&) { detail::apply_section(v, "model.", model_keys); }},
        {"data", [&](const auto& v, const auto&) { detail::apply_section(v, "data.", data_keys); }},
        {"train", [&](const auto& v, const auto&) { detail::apply_section(v, "train.", train_keys); }},
        {"eval", [&](const auto& v, const auto&) { detail::apply_section(v, "eval.", eval_keys); }},
        {"bench", [&](const auto& v, const auto&) { detail::apply_section(v, "bench.", bench_keys); }},
    };
    detail::apply_section(j, "", top_keys);
}

// defaults, then GFK_SEED, then the file (flags are applied by the caller).
inline RunConfig load_config(const std::optional<std::filesystem::path>& path) {
    RunConfig cfg;
    if (const char* env = std::getenv("GFK_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError("GFK_SEED is not an integer: " + std::string(env));
        }
    }
    if (path) {
        std::ifstream f(*path);
        if (!f) throw IoError("cannot open config file " + path->string());
        std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        const bool blank = body.find_first_not_of(" \t\r\n") == std::string::npos;
        if (!blank) {  // an empty file keeps every default
            nlohmann::json j = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
            if (j.is_discarded()) throw ConfigError("malformed JSON in " + path->string());
            apply_config_json(cfg, j);
        }
    }
    return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    return nlohmann::json{
        {"seed", cfg.seed},
        {"out_dir", cfg.out_dir},
        {"model", model_config_to_json(cfg.model)},
        {"data",
         {{"nodes", cfg.data.n_nodes},
          {"clusters", cfg.data.clusters},
          {"vocab", cfg.data.vocab},
          {"tokens_per_node", cfg.data.tokens_per_node},
          {"rho", cfg.data.rho},
          {"p_in", cfg.data.p_in},
          {"p_out", cfg.data.p_out},
          {"heterogeneous", cfg.data.heterogeneous},
          {"relation_types", cfg.data.relation_types}}},
        {"train",
         {{"stage1_max_steps", cfg.schedule.stage1.max_steps},
          {"stage1_patience", cfg.schedule.stage1.patience},
          {"stage2_max_steps", cfg.schedule.stage2.max_steps},
          {"stage2_patience", cfg.schedule.stage2.patience},
          {"lr", cfg.schedule.lr},
          {"batch_size", cfg.schedule.batch_size},
          {"eval_interval", cfg.schedule.eval_interval},
          {"min_delta", cfg.schedule.min_delta},
          {"valid_limit", cfg.schedule.valid_limit},
          {"checkpoint_interval", cfg.schedule.checkpoint_interval},
          {"aggregator", to_string(cfg.train.aggregator)},
          {"stages", cfg.train.two_stage ? "two" : "one"},
          {"sample_k", cfg.train.sample_k},
          {"both_orientations", cfg.train.both_orientations},
          {"naive_mode", cfg.train.naive_mode == NaivePairMode::kDrop ? "drop" : "redraw"}}},
        {"eval",
         {{"n_neg", cfg.eval.n_neg},
          {"neighbor_cap", cfg.eval.neighbor_cap},
          {"exclude_adjacent", cfg.eval.exclude_adjacent},
          {"max_instances", cfg.eval.max_instances},
          {"dump_ranks", cfg.eval.dump_ranks}}},
        {"bench",
         {{"neighbor_sizes", cfg.bench.neighbor_sizes},
          {"batch", cfg.bench.batch},
          {"reps", cfg.bench.reps}}}};
}

inline void write_resolved_config(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream f(std::filesystem::path(cfg.out_dir) / "resolved_config.json");
    if (!f) throw IoError("cannot write resolved config into " + cfg.out_dir);
    f << run_config_to_json(cfg).dump(2) << "\n";
}

}  // namespace gfkit
