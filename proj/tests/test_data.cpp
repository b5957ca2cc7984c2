#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gfkit/data.hpp"

using namespace gfkit;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

TextGraph path_graph_abc() {
    // a - b - c
    TextGraph g;
    g.nodes[0] = {kClsTokenId, 5};
    g.nodes[1] = {kClsTokenId, 6};
    g.nodes[2] = {kClsTokenId, 7};
    g.adjacency[0];
    g.adjacency[1];
    g.adjacency[2];
    g.add_edge(0, 1);
    g.add_edge(1, 2);
    return g;
}

}  // namespace

TEST_CASE("synthetic graph generation basics") {
    SynthConfig cfg;
    cfg.n_nodes = 200;
    cfg.clusters = 4;
    cfg.vocab = 100;
    cfg.tokens_per_node = 8;
    cfg.rho = 0.4;
    cfg.p_in = 0.1;
    cfg.p_out = 0.002;

    SynthOutput out = generate_synthetic_graph(cfg, 11);
    REQUIRE(out.graph.node_count() == 200);
    REQUIRE_NOTHROW(out.graph.validate());

    SECTION("adjacency is symmetric with no self loops") {
        for (const auto& [u, nbrs] : out.graph.adjacency)
            for (NodeId v : nbrs) {
                REQUIRE(u != v);
                REQUIRE(out.graph.has_edge(v, u));
            }
    }

    SECTION("splits partition the edge set") {
        const auto all = out.graph.edges();
        std::size_t total =
            out.splits.train.size() + out.splits.valid.size() + out.splits.test.size();
        REQUIRE(total == all.size());
        REQUIRE(out.splits.test.size() == all.size() / 10);
        // no valid/test edge may be a node's only edge
        for (const auto& split : {out.splits.valid, out.splits.test})
            for (const Edge& e : split) {
                REQUIRE(out.graph.degree(e.u) > 1);
                REQUIRE(out.graph.degree(e.v) > 1);
            }
    }

    SECTION("every sequence starts with [CLS] and has the configured length") {
        for (const auto& [id, tokens] : out.graph.nodes) {
            REQUIRE(tokens.size() == 9);
            REQUIRE(tokens[0] == kClsTokenId);
        }
    }
}

TEST_CASE("rho controls where tokens come from") {
    SynthConfig cfg;
    cfg.n_nodes = 60;
    cfg.clusters = 3;
    cfg.vocab = 100;
    cfg.tokens_per_node = 10;
    cfg.p_in = 0.2;
    cfg.p_out = 0.01;
    detail::TokenBlocks blocks(cfg.vocab, cfg.clusters);

    SECTION("rho=0: every token sits in one cluster block per node") {
        cfg.rho = 0.0;
        SynthOutput out = generate_synthetic_graph(cfg, 5);
        for (const auto& [id, tokens] : out.graph.nodes) {
            int block = -1;
            for (std::size_t i = 1; i < tokens.size(); ++i) {
                REQUIRE(tokens[i] >= blocks.noise_end);
                const int b = (tokens[i] - blocks.noise_end) / blocks.cluster_size;
                if (block < 0) block = b;
                REQUIRE(b == block);
            }
        }
    }

    SECTION("rho=1: every token comes from the shared noise block") {
        cfg.rho = 1.0;
        SynthOutput out = generate_synthetic_graph(cfg, 5);
        for (const auto& [id, tokens] : out.graph.nodes)
            for (std::size_t i = 1; i < tokens.size(); ++i) {
                REQUIRE(tokens[i] >= blocks.noise_begin);
                REQUIRE(tokens[i] < blocks.noise_end);
            }
    }
}

TEST_CASE("p_out=0 with two clusters yields a bipartition") {
    SynthConfig cfg;
    cfg.n_nodes = 120;
    cfg.clusters = 2;
    cfg.vocab = 60;
    cfg.tokens_per_node = 6;
    cfg.rho = 0.3;
    cfg.p_in = 0.15;
    cfg.p_out = 0.0;
    SynthOutput out = generate_synthetic_graph(cfg, 3);

    // derive the cluster of each node from its cluster-block tokens (rho<1
    // guarantees cluster tokens appear with overwhelming probability)
    detail::TokenBlocks blocks(cfg.vocab, cfg.clusters);
    auto cluster_of = [&](NodeId id) {
        for (std::int32_t t : out.graph.tokens_of(id))
            if (t >= blocks.noise_end) return (t - blocks.noise_end) / blocks.cluster_size;
        return -1;
    };
    for (const auto& [u, nbrs] : out.graph.adjacency)
        for (NodeId v : nbrs) {
            const int cu = cluster_of(u), cv = cluster_of(v);
            if (cu >= 0 && cv >= 0) REQUIRE(cu == cv);
        }
}

TEST_CASE("generation is byte-identical across runs") {
    SynthConfig cfg;
    cfg.n_nodes = 300;
    cfg.clusters = 5;
    cfg.vocab = 120;
    cfg.tokens_per_node = 7;
    cfg.p_in = 0.08;
    cfg.p_out = 0.001;

    const auto dir = std::filesystem::temp_directory_path() / "gfkit_data_test";
    std::filesystem::create_directories(dir);
    SynthOutput a = generate_synthetic_graph(cfg, 42);
    SynthOutput b = generate_synthetic_graph(cfg, 42);
    save_graph(dir / "a.graph", a.graph);
    save_graph(dir / "b.graph", b.graph);
    REQUIRE(file_bytes(dir / "a.graph") == file_bytes(dir / "b.graph"));

    SynthOutput c = generate_synthetic_graph(cfg, 43);
    save_graph(dir / "c.graph", c.graph);
    REQUIRE(file_bytes(dir / "a.graph") != file_bytes(dir / "c.graph"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("heterogeneous generation produces a valid graph") {
    SynthConfig cfg;
    cfg.n_nodes = 150;
    cfg.clusters = 5;
    cfg.vocab = 120;
    cfg.tokens_per_node = 6;
    cfg.p_in = 0.15;
    cfg.p_out = 0.001;
    cfg.heterogeneous = true;
    SynthOutput out = generate_synthetic_graph(cfg, 9);
    REQUIRE_NOTHROW(out.graph.validate());
    REQUIRE(out.graph.edges().size() > 0);
}

TEST_CASE("sample_neighbors honors degree and k") {
    TextGraph g = path_graph_abc();
    g.add_edge(0, 2);  // make node 0 have degree 2
    Rng rng(1);
    REQUIRE(sample_neighbors(g, 0, 5, rng).size() == 2);
    REQUIRE(sample_neighbors(g, 0, 0, rng).empty());
    REQUIRE_THROWS_AS(sample_neighbors(g, 99, 3, rng), RangeError);
}

TEST_CASE("sample_neighbors is uniform without replacement") {
    // star: node 0 with 100 leaves; inclusion frequency of each leaf over
    // many draws of k=5 should match 5/100 within 3 sigma
    TextGraph g;
    g.nodes[0] = {kClsTokenId};
    g.adjacency[0];
    for (NodeId leaf = 1; leaf <= 100; ++leaf) {
        g.nodes[leaf] = {kClsTokenId};
        g.adjacency[leaf];
        g.add_edge(0, leaf);
    }
    const std::size_t draws = 100000;
    std::vector<std::size_t> hits(101, 0);
    Rng rng(2024);
    for (std::size_t i = 0; i < draws; ++i) {
        auto sample = sample_neighbors(g, 0, 5, rng);
        REQUIRE(sample.size() == 5);
        for (NodeId nb : sample) hits[nb]++;
    }
    const double p = 0.05;
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(draws));
    for (NodeId leaf = 1; leaf <= 100; ++leaf) {
        const double freq = static_cast<double>(hits[leaf]) / draws;
        REQUIRE(std::abs(freq - p) <= 3.0 * sigma);
    }
}

TEST_CASE("build_link_pairs on a single edge removes the naive neighbour") {
    TextGraph g;
    g.nodes[0] = {kClsTokenId, 4};
    g.nodes[1] = {kClsTokenId, 5};
    g.adjacency[0];
    g.adjacency[1];
    g.add_edge(0, 1);
    Rng rng(3);
    auto pairs = build_link_pairs(g, g.edges(), 5, rng);
    REQUIRE(pairs.size() == 1);
    REQUIRE(pairs[0].q_neighbors.empty());
    REQUIRE(pairs[0].k_neighbors.empty());
}

TEST_CASE("triangle pairs exclude the partner from samples") {
    TextGraph g;
    for (NodeId i = 0; i < 3; ++i) {
        g.nodes[i] = {kClsTokenId, static_cast<std::int32_t>(4 + i)};
        g.adjacency[i];
    }
    g.add_edge(0, 1);
    g.add_edge(1, 2);
    g.add_edge(0, 2);
    Rng rng(4);
    auto pairs = build_link_pairs(g, g.edges(), 2, rng);
    REQUIRE(pairs.size() == 3);
    for (const auto& p : pairs) {
        for (NodeId nb : p.q_neighbors) REQUIRE(nb != p.k);
        for (NodeId nb : p.k_neighbors) REQUIRE(nb != p.q);
    }
}

TEST_CASE("fixed seed reproduces the pair list") {
    SynthConfig cfg;
    cfg.n_nodes = 80;
    cfg.clusters = 4;
    cfg.vocab = 80;
    cfg.tokens_per_node = 5;
    cfg.p_in = 0.2;
    cfg.p_out = 0.01;
    SynthOutput out = generate_synthetic_graph(cfg, 6);

    Rng r1(77), r2(77);
    auto a = build_link_pairs(out.graph, out.splits.train, 3, r1);
    auto b = build_link_pairs(out.graph, out.splits.train, 3, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].q == b[i].q);
        REQUIRE(a[i].k == b[i].k);
        REQUIRE(a[i].q_neighbors == b[i].q_neighbors);
        REQUIRE(a[i].k_neighbors == b[i].k_neighbors);
    }
}

TEST_CASE("star graph naive filtering in both modes") {
    TextGraph g;
    g.nodes[0] = {kClsTokenId, 4};
    g.adjacency[0];
    for (NodeId leaf = 1; leaf <= 4; ++leaf) {
        g.nodes[leaf] = {kClsTokenId, static_cast<std::int32_t>(4 + leaf)};
        g.adjacency[leaf];
        g.add_edge(0, leaf);
    }

    SECTION("drop mode yields the empty set") {
        Rng rng(5);
        auto pairs = build_link_pairs(g, g.edges(), 5, rng, false, NaivePairMode::kDrop);
        REQUIRE(pairs.empty());
    }

    SECTION("redraw mode replaces the offender when alternatives exist") {
        Rng rng(6);
        auto pairs = build_link_pairs(g, g.edges(), 2, rng, false, NaivePairMode::kRedraw);
        REQUIRE(pairs.size() == 4);
        for (const auto& p : pairs) {
            // q side is the hub: neighbours stay but never include the partner
            REQUIRE(p.q == 0);
            for (NodeId nb : p.q_neighbors) REQUIRE(nb != p.k);
            REQUIRE(p.q_neighbors.size() == 2);
            // the leaf's only neighbour is the partner, so it ends up empty
            REQUIRE(p.k_neighbors.empty());
        }
    }
}

TEST_CASE("eval instances on a three-node path") {
    TextGraph g = path_graph_abc();
    std::vector<Edge> test_edges = {{0, 1}};
    Rng rng(7);
    auto instances = make_eval_instances(g, test_edges, 1, 5, 8, rng);
    REQUIRE(instances.size() == 1);
    const auto& inst = instances[0];
    REQUIRE(inst.candidates.size() == 2);  // n_neg + 1
    REQUIRE(inst.query.node_ids[0] == 0);
    // the positive is node 1; the only eligible negative is node 2
    REQUIRE(inst.candidates[inst.positive_index].node_ids[0] == 1);
    REQUIRE(inst.candidates[1 - inst.positive_index].node_ids[0] == 2);
}

TEST_CASE("eval instance construction is deterministic and skips tight graphs") {
    SynthConfig cfg;
    cfg.n_nodes = 60;
    cfg.clusters = 3;
    cfg.vocab = 80;
    cfg.tokens_per_node = 5;
    cfg.p_in = 0.3;
    cfg.p_out = 0.02;
    SynthOutput out = generate_synthetic_graph(cfg, 8);

    Rng r1(9), r2(9);
    auto a = make_eval_instances(out.graph, out.splits.test, 10, 3, 8, r1);
    auto b = make_eval_instances(out.graph, out.splits.test, 10, 3, 8, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].positive_index == b[i].positive_index);
        REQUIRE(a[i].query.node_ids == b[i].query.node_ids);
        for (std::size_t c = 0; c < a[i].candidates.size(); ++c)
            REQUIRE(a[i].candidates[c].node_ids == b[i].candidates[c].node_ids);
    }

    // asking for more negatives than nodes exist skips every instance
    TextGraph tiny = path_graph_abc();
    Rng r3(10);
    auto skipped = make_eval_instances(tiny, {{0, 1}}, 50, 2, 8, r3);
    REQUIRE(skipped.empty());
}

TEST_CASE("tokenizer and vocabulary") {
    Vocab vocab = build_vocab({"the cat sat on the mat", "the dog sat"}, 10);

    SECTION("empty text tokenizes to [CLS] only") {
        auto ids = tokenize_text("", vocab, 8);
        REQUIRE(ids == std::vector<std::int32_t>{kClsTokenId});
    }
    SECTION("out-of-vocabulary words map to UNK") {
        auto ids = tokenize_text("zebra quark", vocab, 8);
        REQUIRE(ids == std::vector<std::int32_t>({kClsTokenId, kUnkTokenId, kUnkTokenId}));
    }
    SECTION("covered words round-trip through the table") {
        auto ids = tokenize_text("The cat sat!", vocab, 8);
        REQUIRE(ids.size() == 4);
        REQUIRE(ids[0] == kClsTokenId);
        REQUIRE(ids[1] == vocab.lookup("the"));
        REQUIRE(ids[2] == vocab.lookup("cat"));
        REQUIRE(ids[3] == vocab.lookup("sat"));
        for (std::size_t i = 1; i < ids.size(); ++i) REQUIRE(ids[i] >= 4);
    }
    SECTION("truncation respects max_tokens") {
        auto ids = tokenize_text("the cat sat on the mat", vocab, 4);
        REQUIRE(ids.size() == 4);
    }
}

TEST_CASE("graph file round-trip") {
    SynthConfig cfg;
    cfg.n_nodes = 50;
    cfg.clusters = 2;
    cfg.vocab = 60;
    cfg.tokens_per_node = 4;
    cfg.p_in = 0.2;
    cfg.p_out = 0.01;
    SynthOutput out = generate_synthetic_graph(cfg, 12);

    const auto dir = std::filesystem::temp_directory_path() / "gfkit_graphio_test";
    std::filesystem::create_directories(dir);
    save_graph(dir / "g.graph", out.graph);
    TextGraph loaded = load_graph(dir / "g.graph");
    REQUIRE(loaded.node_count() == out.graph.node_count());
    REQUIRE(loaded.edges().size() == out.graph.edges().size());
    for (const auto& [id, tokens] : out.graph.nodes) REQUIRE(loaded.tokens_of(id) == tokens);

    save_graph(dir / "g2.graph", loaded);
    REQUIRE(file_bytes(dir / "g.graph") == file_bytes(dir / "g2.graph"));

    save_edges(dir / "e.edges", out.splits.test);
    auto edges = load_edges(dir / "e.edges");
    REQUIRE(edges.size() == out.splits.test.size());

    REQUIRE_THROWS_AS(load_graph(dir / "missing.graph"), IoError);
    std::filesystem::remove_all(dir);
}
