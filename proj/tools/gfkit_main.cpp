// Command-line driver: data generation, training, evaluation, scaling
// benchmark, artifact inspection. Exit codes: 0 success, 1 usage/config
// error, 2 runtime error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "gfkit/bench.hpp"
#include "gfkit/config.hpp"
#include "gfkit/data.hpp"
#include "gfkit/eval.hpp"
#include "gfkit/io.hpp"
#include "gfkit/model.hpp"
#include "gfkit/training.hpp"

namespace fs = std::filesystem;
using namespace gfkit;

namespace {

bool parse_on_off(const std::string& value, const std::string& flag) {
    if (value == "on") return true;
    if (value == "off") return false;
    throw ConfigError(flag + ": expected on|off, got '" + value + "'");
}

void run_gen_data(const RunConfig& cfg) {
    cfg.data.validate();
    write_resolved_config(cfg);
    const fs::path out(cfg.out_dir);

    SynthOutput synth = generate_synthetic_graph(cfg.data, derive_seed(cfg.seed, "gen"));
    save_graph(out / "graph.txt", synth.graph);
    save_edges(out / "train.edges", synth.splits.train);
    save_edges(out / "valid.edges", synth.splits.valid);
    save_edges(out / "test.edges", synth.splits.test);

    nlohmann::json meta{{"generator", "sbm-mixture-unigram"},
                        {"seed", cfg.seed},
                        {"data", run_config_to_json(cfg)["data"]},
                        {"nodes", synth.graph.node_count()},
                        {"edges", synth.graph.edges().size()},
                        {"splits",
                         {{"train", synth.splits.train.size()},
                          {"valid", synth.splits.valid.size()},
                          {"test", synth.splits.test.size()}}}};
    std::ofstream mf(out / "graph.meta.json");
    mf << meta.dump(2) << "\n";

    std::cout << "generated " << synth.graph.node_count() << " nodes, "
              << synth.graph.edges().size() << " edges -> " << out.string() << "\n";
}

struct LoadedData {
    TextGraph graph;
    std::vector<Edge> train, valid, test;
};

LoadedData load_data_dir(const fs::path& dir) {
    LoadedData d;
    d.graph = load_graph(dir / "graph.txt");
    d.train = load_edges(dir / "train.edges");
    d.valid = load_edges(dir / "valid.edges");
    d.test = load_edges(dir / "test.edges");
    return d;
}

void run_train(RunConfig cfg, const fs::path& data_dir) {
    LoadedData loaded = load_data_dir(data_dir);

    // Adopt the dataset's generator config; the embedding table must cover
    // exactly the data's token-id range.
    const fs::path meta_path = data_dir / "graph.meta.json";
    if (fs::exists(meta_path)) {
        std::ifstream mf(meta_path);
        nlohmann::json meta = nlohmann::json::parse(mf, nullptr, false);
        if (!meta.is_discarded() && meta.contains("data"))
            apply_config_json(cfg, nlohmann::json{{"data", meta["data"]}});
    } else {
        std::int32_t max_id = kUnkTokenId;
        for (const auto& [id, tokens] : loaded.graph.nodes)
            for (std::int32_t t : tokens) max_id = std::max(max_id, t);
        cfg.data.vocab = max_id + 1;
    }
    cfg.model.vocab = cfg.data.vocab;

    cfg.validate();
    write_resolved_config(cfg);
    const fs::path out(cfg.out_dir);

    LinkDataset dataset;
    dataset.graph = &loaded.graph;
    Rng pair_rng(derive_seed(cfg.seed, "pairs"));
    dataset.train = build_link_pairs(loaded.graph, loaded.train, cfg.train.sample_k, pair_rng,
                                     cfg.train.both_orientations, cfg.train.naive_mode);
    dataset.valid = build_link_pairs(loaded.graph, loaded.valid, cfg.train.sample_k, pair_rng,
                                     cfg.train.both_orientations, cfg.train.naive_mode);

    Rng init_rng(derive_seed(cfg.seed, "init"));
    ParamSet params = init_params(cfg.model, init_rng, cfg.train.aggregator);

    TrainSchedule sched = cfg.schedule;
    sched.seed = cfg.seed;
    if (!cfg.train.two_stage) sched.stage1.max_steps = 0;

    std::ofstream log(out / "train_log.csv");
    if (!log) throw IoError("cannot write " + (out / "train_log.csv").string());
    log << "stage,step,split,loss,wall_ms\n";

    TrainOptions opts;
    opts.aggregator = cfg.train.aggregator;
    opts.log_stream = &log;
    opts.checkpoint_hook = [&](int stage, int step, const ParamSet& p) {
        if (sched.checkpoint_interval > 0 && step % sched.checkpoint_interval == 0 && step > 0)
            save_checkpoint(out / ("ckpt_stage" + std::to_string(stage) + "_step" +
                                   std::to_string(step)),
                            p, cfg.model);
        if (stage == 1) save_checkpoint(out / "ckpt_stage1", p, cfg.model);
    };

    TrainResult result = train_two_stage(cfg.model, params, dataset, sched, opts);
    save_checkpoint(out / "ckpt_final", params, cfg.model);

    std::cout << "trained " << result.stage1_steps << " polluted + " << result.stage2_steps
              << " clean steps; checkpoint -> " << (out / "ckpt_final").string() << "\n";
}

void run_eval(const RunConfig& cfg, const fs::path& data_dir, const fs::path& ckpt_dir) {
    write_resolved_config(cfg);
    const fs::path out(cfg.out_dir);
    LoadedData loaded = load_data_dir(data_dir);
    Checkpoint ckpt = load_checkpoint(ckpt_dir);

    std::vector<Edge> test_edges = loaded.test;
    if (cfg.eval.max_instances > 0 &&
        test_edges.size() > static_cast<std::size_t>(cfg.eval.max_instances))
        test_edges.resize(static_cast<std::size_t>(cfg.eval.max_instances));

    Rng eval_rng(derive_seed(cfg.seed, "eval"));
    auto instances = make_eval_instances(loaded.graph, test_edges,
                                         static_cast<std::size_t>(cfg.eval.n_neg),
                                         static_cast<std::size_t>(cfg.eval.neighbor_cap),
                                         ckpt.config.max_tokens, eval_rng,
                                         cfg.eval.exclude_adjacent);

    NeighborCache ncache;
    TextEmbedCache tcache;
    EncodeFn encoder = make_encoder(ckpt.params, ckpt.config, cfg.train.aggregator, &ncache, &tcache);
    RankReport report = evaluate_model(encoder, instances, cfg.eval.dump_ranks);

    std::ofstream cf(out / "report.csv");
    cf << report_to_csv(report);
    std::ofstream jf(out / "report.json");
    nlohmann::json j = report_to_json(report);
    j["aggregator"] = to_string(cfg.train.aggregator);
    j["mode"] = to_string(ckpt.config.mode);
    j["n_neg"] = cfg.eval.n_neg;
    j["neighbor_cap"] = cfg.eval.neighbor_cap;
    jf << j.dump(2) << "\n";

    std::cout << "eval (" << to_string(cfg.train.aggregator) << ", " << report.instances
              << " instances): p@1=" << report.p_at_1 << " ndcg=" << report.ndcg
              << " mrr=" << report.mrr << "\n";
}

void run_bench(const RunConfig& cfg) {
    cfg.model.validate();
    write_resolved_config(cfg);
    const fs::path out(cfg.out_dir);

    Rng init_rng(derive_seed(cfg.seed, "bench_params"));
    ParamSet params = init_params(cfg.model, init_rng, Aggregator::kMax);
    BenchReport report = bench_scaling(cfg.model, params, cfg.bench.neighbor_sizes,
                                       cfg.bench.batch, cfg.bench.reps, cfg.seed);

    std::ofstream cf(out / "bench.csv");
    cf << bench_to_csv(report);
    std::ofstream jf(out / "bench_fit.json");
    jf << bench_fit_to_json(report).dump(2) << "\n";

    std::cout << bench_to_csv(report);
    std::cout << "nested fit: r2=" << report.nested_fit.r2
              << "  cascaded fit: r2=" << report.cascaded_fit.r2 << "\n";
}

void run_inspect(const fs::path& path) {
    if (fs::is_directory(path) && fs::exists(path / "manifest.json")) {
        Checkpoint ckpt = load_checkpoint(path);
        std::cout << "checkpoint " << path.string() << "\n"
                  << "  params: " << ckpt.params.param_count() << " ("
                  << ckpt.params.named_tensors().size() << " tensors)\n"
                  << "  version hash: " << ckpt.params.version_hash(ckpt.config) << "\n"
                  << "  config: " << model_config_to_json(ckpt.config).dump() << "\n";
        return;
    }
    if (!fs::exists(path)) throw IoError("no such file: " + path.string());

    std::ifstream probe(path, std::ios::binary);
    char magic[5] = {};
    probe.read(magic, 4);
    if (std::string(magic, 4) == "GFKC") {
        NeighborCache cache = load_neighbor_cache(path);
        std::cout << "neighbor cache " << path.string() << ": " << cache.size() << " entries\n";
        return;
    }
    if (std::string(magic, 4) == "GFKT") {
        std::ifstream f(path, std::ios::binary);
        Tensor t = load_tensor<double>(f);
        std::cout << "tensor " << path.string() << ": shape " << shape_str(t.shape()) << "\n";
        return;
    }
    if (magic[0] == '#') {
        TextGraph graph = load_graph(path);
        std::size_t min_deg = ~std::size_t{0}, max_deg = 0, total = 0;
        for (const auto& [id, nbrs] : graph.adjacency) {
            min_deg = std::min(min_deg, nbrs.size());
            max_deg = std::max(max_deg, nbrs.size());
            total += nbrs.size();
        }
        std::cout << "graph " << path.string() << ": " << graph.node_count() << " nodes, "
                  << graph.edges().size() << " edges, degree min/mean/max = " << min_deg << "/"
                  << (graph.node_count() ? static_cast<double>(total) / graph.node_count() : 0.0)
                  << "/" << max_deg << "\n";
        return;
    }
    auto edges = load_edges(path);
    std::cout << "edge list " << path.string() << ": " << edges.size() << " edges\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nested graph-attention transformer encoders for textual graphs"};
    app.require_subcommand(1);

    std::string config_path, out_dir, mode_flag, stages_flag, share_flag, agg_flag, bias_flag,
        naive_flag;
    std::string data_dir, ckpt_dir, inspect_path;
    std::uint64_t seed_flag = 0;
    int nodes_flag = 0, clusters_flag = 0, vocab_flag = 0, tokens_flag = 0;
    double rho_flag = 0, p_in_flag = 0, p_out_flag = 0, lr_flag = 0;
    int batch_flag = 0, steps1_flag = -1, steps2_flag = -1;
    int nneg_flag = 0, cap_flag = 0, max_inst_flag = -1;
    std::vector<int> sizes_flag;
    int bench_batch_flag = 0, reps_flag = 0;
    bool include_adjacent = false, dump_ranks = false, heterogeneous = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "JSON config file");
        sub->add_option("-o,--out", out_dir, "output directory");
        sub->add_option("--seed", seed_flag, "global seed");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic textual graph + splits");
    add_common(gen);
    gen->add_option("--nodes", nodes_flag, "node count");
    gen->add_option("--clusters", clusters_flag, "cluster count");
    gen->add_option("--vocab", vocab_flag, "vocabulary size");
    gen->add_option("--tokens", tokens_flag, "tokens per node");
    gen->add_option("--rho", rho_flag, "noise-token fraction")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--p-in", p_in_flag, "intra-cluster edge probability");
    gen->add_option("--p-out", p_out_flag, "inter-cluster edge probability");
    gen->add_flag("--heterogeneous", heterogeneous, "draw edges across relation types");

    CLI::App* train = app.add_subcommand("train", "train a model on a generated graph");
    add_common(train);
    train->add_option("--data", data_dir, "gen-data output directory")->required();
    train->add_option("--mode", mode_flag, "bidirectional|unidirectional");
    train->add_option("--stages", stages_flag, "two|one (one = no polluted warm-up)");
    train->add_option("--share-gnn", share_flag, "on|off");
    train->add_option("--relation-bias", bias_flag, "on|off");
    train->add_option("--aggregator", agg_flag, "nested|max|mean|att|gat|none");
    train->add_option("--naive-mode", naive_flag, "drop|redraw");
    train->add_option("--lr", lr_flag, "learning rate");
    train->add_option("--batch-size", batch_flag, "pairs per step");
    train->add_option("--steps1", steps1_flag, "stage-1 step cap");
    train->add_option("--steps2", steps2_flag, "stage-2 step cap");

    CLI::App* eval_cmd = app.add_subcommand("eval", "rank test edges with a trained checkpoint");
    add_common(eval_cmd);
    eval_cmd->add_option("--data", data_dir, "gen-data output directory")->required();
    eval_cmd->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    eval_cmd->add_option("--aggregator", agg_flag, "nested|max|mean|att|gat|none");
    eval_cmd->add_option("--n-neg", nneg_flag, "negatives per instance");
    eval_cmd->add_option("--neighbor-cap", cap_flag, "neighbours sampled per candidate");
    eval_cmd->add_option("--max-instances", max_inst_flag, "instance cap (0 = all)");
    eval_cmd->add_flag("--include-adjacent", include_adjacent,
                       "sample negatives uniformly (may include true neighbours)");
    eval_cmd->add_flag("--dump-ranks", dump_ranks, "include per-instance ranks in report.json");

    CLI::App* bench = app.add_subcommand("bench", "wall-time/memory scaling vs neighbour count");
    add_common(bench);
    bench->add_option("--sizes", sizes_flag, "neighbour counts to sweep");
    bench->add_option("--batch", bench_batch_flag, "instances per mini-batch");
    bench->add_option("--reps", reps_flag, "timed repetitions");
    bench->add_option("--mode", mode_flag, "bidirectional|unidirectional");

    CLI::App* inspect = app.add_subcommand("inspect", "summarize checkpoints, graphs, caches");
    inspect->add_option("path", inspect_path, "artifact path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (inspect->parsed()) {
            run_inspect(inspect_path);
            return 0;
        }

        RunConfig cfg = load_config(config_path.empty()
                                        ? std::nullopt
                                        : std::optional<fs::path>(config_path));
        CLI::App* sub = app.get_subcommands().front();
        auto passed = [&](const std::string& name) {
            const CLI::Option* opt = sub->get_option_no_throw(name);
            return opt != nullptr && opt->count() > 0;
        };
        if (passed("--seed")) cfg.seed = seed_flag;
        if (passed("--out")) cfg.out_dir = out_dir;
        if (passed("--mode")) cfg.model.mode = encode_mode_from_string(mode_flag);
        if (passed("--aggregator")) cfg.train.aggregator = aggregator_from_string(agg_flag);

        if (gen->parsed()) {
            if (gen->count("--nodes")) cfg.data.n_nodes = static_cast<std::size_t>(nodes_flag);
            if (gen->count("--clusters")) cfg.data.clusters = static_cast<std::size_t>(clusters_flag);
            if (gen->count("--vocab")) {
                cfg.data.vocab = vocab_flag;
                cfg.model.vocab = vocab_flag;
            }
            if (gen->count("--tokens")) cfg.data.tokens_per_node = tokens_flag;
            if (gen->count("--rho")) cfg.data.rho = rho_flag;
            if (gen->count("--p-in")) cfg.data.p_in = p_in_flag;
            if (gen->count("--p-out")) cfg.data.p_out = p_out_flag;
            if (gen->count("--heterogeneous")) cfg.data.heterogeneous = true;
            run_gen_data(cfg);
        } else if (train->parsed()) {
            if (train->count("--stages")) {
                if (stages_flag == "two") cfg.train.two_stage = true;
                else if (stages_flag == "one") cfg.train.two_stage = false;
                else throw ConfigError("--stages: expected two|one");
            }
            if (train->count("--share-gnn"))
                cfg.model.share_gnn = parse_on_off(share_flag, "--share-gnn");
            if (train->count("--relation-bias"))
                cfg.model.relation_bias = parse_on_off(bias_flag, "--relation-bias");
            if (train->count("--naive-mode")) {
                if (naive_flag == "drop") cfg.train.naive_mode = NaivePairMode::kDrop;
                else if (naive_flag == "redraw") cfg.train.naive_mode = NaivePairMode::kRedraw;
                else throw ConfigError("--naive-mode: expected drop|redraw");
            }
            if (train->count("--lr")) cfg.schedule.lr = lr_flag;
            if (train->count("--batch-size")) cfg.schedule.batch_size = batch_flag;
            if (train->count("--steps1")) cfg.schedule.stage1.max_steps = steps1_flag;
            if (train->count("--steps2")) cfg.schedule.stage2.max_steps = steps2_flag;
            run_train(cfg, data_dir);
        } else if (eval_cmd->parsed()) {
            if (eval_cmd->count("--n-neg")) cfg.eval.n_neg = nneg_flag;
            if (eval_cmd->count("--neighbor-cap")) cfg.eval.neighbor_cap = cap_flag;
            if (eval_cmd->count("--max-instances")) cfg.eval.max_instances = max_inst_flag;
            if (eval_cmd->count("--include-adjacent")) cfg.eval.exclude_adjacent = false;
            if (eval_cmd->count("--dump-ranks")) cfg.eval.dump_ranks = true;
            run_eval(cfg, data_dir, ckpt_dir);
        } else if (bench->parsed()) {
            if (bench->count("--sizes")) cfg.bench.neighbor_sizes = sizes_flag;
            if (bench->count("--batch")) cfg.bench.batch = bench_batch_flag;
            if (bench->count("--reps")) cfg.bench.reps = reps_flag;
            run_bench(cfg);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
