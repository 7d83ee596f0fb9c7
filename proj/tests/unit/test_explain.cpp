#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "leakgnn/errors.hpp"
#include "leakgnn/explain.hpp"

using namespace leakgnn;

namespace {

Sample random_sample(std::mt19937_64& rng, const WdnGraph& g, std::size_t node_dim,
                     std::size_t edge_dim) {
    Sample s;
    s.node_features = fixtures::randn(rng, {g.num_nodes, node_dim});
    if (edge_dim > 0) s.edge_features = fixtures::randn(rng, {g.num_edges(), edge_dim});
    s.node_labels.assign(g.num_nodes, 0.0);
    s.graph_label = 1.0;
    s.scenario_id = "probe";
    return s;
}

LeakModel small_model(LayerKind kind, Task task, std::size_t edge_dim,
                      std::uint64_t seed) {
    ModelConfig cfg;
    cfg.layer = kind;
    cfg.depth = 2;
    cfg.hidden = 16;
    cfg.in_dim = 4;
    cfg.edge_dim = edge_dim;
    cfg.task = task;
    cfg.seed = seed;
    return LeakModel::init(cfg);
}

ExplanationMask hand_mask(std::vector<double> pipe_values, const WdnGraph& g) {
    ExplanationMask m;
    m.pipe_mask = std::move(pipe_values);
    m.edge_mask.resize(g.num_edges());
    for (std::size_t e = 0; e < g.num_edges(); ++e) m.edge_mask[e] = m.pipe_mask[e / 2];
    m.feature_mask = {0.5, 0.5, 0.5, 0.5};
    return m;
}

}  // namespace

TEST_CASE("all-ones masks reproduce the unmasked output exactly") {
    std::mt19937_64 rng(31);
    WdnGraph g = fixtures::random_graph(rng, 7);
    for (LayerKind kind : fixtures::all_kinds()) {
        const std::size_t edge_dim = layer_uses_edge_features(kind) ? 4 : 0;
        LeakModel m = small_model(kind, Task::NodeLocalization, edge_dim, 17);
        Sample s = random_sample(rng, g, 4, edge_dim);
        const Tensor& ef = edge_dim > 0 ? s.edge_features : Tensor();
        Tensor ones = Tensor::full({g.num_edges()}, 1.0);
        Tensor plain = m.node_logits(g, s.node_features, ef);
        Tensor masked = m.node_logits(g, s.node_features, ef, ones);
        INFO(layer_kind_name(kind));
        CHECK(plain.values() == masked.values());
    }
}

TEST_CASE("masks stay in range and are symmetric across orientations") {
    std::mt19937_64 rng(32);
    WdnGraph g = fixtures::random_graph(rng, 6);
    LeakModel m = small_model(LayerKind::Gen, Task::GraphDetection, 4, 3);
    Sample s = random_sample(rng, g, 4, 4);

    ExplainOptions opts;
    opts.steps = 20;
    ExplanationMask mask = explain(m, g, s, ExplainTarget::graph(), opts);
    REQUIRE(mask.pipe_mask.size() == g.num_pipes());
    REQUIRE(mask.edge_mask.size() == g.num_edges());
    REQUIRE(mask.feature_mask.size() == 4);
    for (double v : mask.pipe_mask) CHECK((v >= 0.0 && v <= 1.0));
    for (double v : mask.feature_mask) CHECK((v >= 0.0 && v <= 1.0));
    for (std::size_t p = 0; p < g.num_pipes(); ++p) {
        CHECK(mask.edge_mask[2 * p] == mask.pipe_mask[p]);
        CHECK(mask.edge_mask[2 * p + 1] == mask.pipe_mask[p]);
    }
    CHECK(mask.objective_trace.size() == opts.steps + 1);
    CHECK(mask.final_objective == mask.objective_trace.back());
}

TEST_CASE("the explainer never changes model parameters") {
    std::mt19937_64 rng(33);
    WdnGraph g = fixtures::random_graph(rng, 6);
    LeakModel m = small_model(LayerKind::Gat, Task::NodeLocalization, 0, 5);
    Sample s = random_sample(rng, g, 4, 0);

    std::vector<std::vector<double>> before;
    for (const auto& [name, t] : m.named_parameters()) before.push_back(t.values());

    ExplainOptions opts;
    opts.steps = 15;
    explain(m, g, s, ExplainTarget::at_node(g.num_nodes - 1), opts);

    const auto params = m.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(params[i].second.values() == before[i]);
        for (double gv : params[i].second.grad()) CHECK(gv == 0.0);
    }
}

TEST_CASE("a graph-blind model drives every mask toward zero") {
    std::mt19937_64 rng(34);
    WdnGraph g = fixtures::random_graph(rng, 6);
    LeakModel m = small_model(LayerKind::Gcn, Task::GraphDetection, 0, 7);
    for (auto& [name, t] : m.named_parameters()) {
        if (name.rfind("layers.", 0) == 0) {
            std::fill(t.values().begin(), t.values().end(), 0.0);
        }
    }
    Sample s = random_sample(rng, g, 4, 0);

    ExplainOptions opts;
    opts.steps = 100;
    ExplanationMask mask = explain(m, g, s, ExplainTarget::graph(), opts);
    CHECK(mask.converged);
    for (std::size_t i = 1; i < mask.objective_trace.size(); ++i) {
        CHECK(mask.objective_trace[i] <= mask.objective_trace[i - 1] + 1e-9);
    }
    for (double v : mask.pipe_mask) CHECK(v < 0.5);
    for (double v : mask.feature_mask) CHECK(v < 0.5);
}

TEST_CASE("without regularizers the preservation error never rises") {
    std::mt19937_64 rng(35);
    WdnGraph g = fixtures::random_graph(rng, 6);
    LeakModel m = small_model(LayerKind::Sage, Task::GraphDetection, 0, 11);
    Sample s = random_sample(rng, g, 4, 0);

    ExplainOptions opts;
    opts.steps = 50;
    opts.lambda_size = 0.0;
    opts.lambda_entropy = 0.0;
    ExplanationMask mask = explain(m, g, s, ExplainTarget::graph(), opts);
    CHECK(mask.final_objective <= mask.objective_trace.front() + 1e-12);
}

TEST_CASE("explanations are deterministic per seed") {
    std::mt19937_64 rng(36);
    WdnGraph g = fixtures::random_graph(rng, 5);
    LeakModel m = small_model(LayerKind::Gcn, Task::GraphDetection, 0, 2);
    Sample s = random_sample(rng, g, 4, 0);

    ExplainOptions opts;
    opts.steps = 10;
    ExplanationMask a = explain(m, g, s, ExplainTarget::graph(), opts);
    ExplanationMask b = explain(m, g, s, ExplainTarget::graph(), opts);
    CHECK(a.pipe_mask == b.pipe_mask);
    CHECK(a.feature_mask == b.feature_mask);
    CHECK(a.objective_trace == b.objective_trace);

    opts.seed = 99;
    ExplanationMask c = explain(m, g, s, ExplainTarget::graph(), opts);
    CHECK(a.pipe_mask != c.pipe_mask);
}

TEST_CASE("bad explain targets and options are rejected") {
    std::mt19937_64 rng(37);
    WdnGraph g = fixtures::random_graph(rng, 4);
    LeakModel m = small_model(LayerKind::Gcn, Task::NodeLocalization, 0, 1);
    Sample s = random_sample(rng, g, 4, 0);
    CHECK_THROWS_AS(explain(m, g, s, ExplainTarget::at_node(g.num_nodes)),
                    ValidationError);
    ExplainOptions opts;
    opts.steps = 0;
    CHECK_THROWS_AS(explain(m, g, s, ExplainTarget::graph(), opts), ConfigError);
    Sample wrong = random_sample(rng, g, 3, 0);
    CHECK_THROWS_AS(explain(m, g, wrong, ExplainTarget::graph()), ShapeError);
}

TEST_CASE("subgraph extraction keeps top-k pipes over the threshold") {
    WdnGraph g = from_edge_list(4, {{0, 1}, {1, 2}, {2, 3}});
    SUBCASE("scores pick the top two") {
        ExplanationMask m = hand_mask({0.9, 0.3, 0.8}, g);
        Subgraph sub = extract_subgraph(m, g, 2, 0.5);
        CHECK(sub.pipes == std::vector<std::size_t>{0, 2});
        CHECK(sub.nodes == std::vector<std::size_t>{0, 1, 2, 3});
        CHECK_FALSE(sub.empty);
    }
    SUBCASE("ties break toward the lowest endpoints") {
        ExplanationMask m = hand_mask({1.0, 1.0, 1.0}, g);
        Subgraph sub = extract_subgraph(m, g, 2, 0.5);
        CHECK(sub.pipes == std::vector<std::size_t>{0, 1});
        CHECK(sub.nodes == std::vector<std::size_t>{0, 1, 2});
    }
    SUBCASE("all below the threshold yields an empty flagged subgraph") {
        ExplanationMask m = hand_mask({0.2, 0.1, 0.3}, g);
        Subgraph sub = extract_subgraph(m, g, 2, 0.5);
        CHECK(sub.empty);
        CHECK(sub.pipes.empty());
        CHECK(sub.nodes.empty());
    }
    SUBCASE("threshold cuts within the budget") {
        ExplanationMask m = hand_mask({0.9, 0.4, 0.8}, g);
        Subgraph sub = extract_subgraph(m, g, 3, 0.5);
        CHECK(sub.pipes == std::vector<std::size_t>{0, 2});
    }
    SUBCASE("parameter validation") {
        ExplanationMask m = hand_mask({0.9, 0.4, 0.8}, g);
        CHECK_THROWS_AS(extract_subgraph(m, g, 0, 0.5), ConfigError);
        CHECK_THROWS_AS(extract_subgraph(m, g, 2, 1.5), ConfigError);
        m.pipe_mask.pop_back();
        CHECK_THROWS_AS(extract_subgraph(m, g, 2, 0.5), ShapeError);
    }
}

TEST_CASE("feature ranking is descending and stable") {
    ExplanationMask m;
    m.feature_mask = {0.2, 0.9, 0.5};
    CHECK(rank_features(m) == std::vector<std::size_t>{1, 2, 0});
    m.feature_mask = {0.0, 1.0, 0.0, 0.0};
    CHECK(rank_features(m)[0] == 1);
    m.feature_mask = {0.5, 0.5, 0.5};
    CHECK(rank_features(m) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("explanation records serialize with pipe and feature names") {
    WdnGraph g = from_edge_list(3, {{0, 1}, {1, 2}});
    ExplanationMask m = hand_mask({0.9, 0.2}, g);
    m.target = ExplainTarget::at_node(1);
    m.converged = true;
    m.final_objective =  0.125;
    m.objective_trace = {0.5, 0.25, 0.125};
    Subgraph sub = extract_subgraph(m, g, 2, 0.5);
    const std::string text = explanation_to_json(
        m, sub, g, {"Pressure-mean", "Pressure-std", "Pressure-min", "Pressure-max"});
    CHECK(text.find("\"P1\"") != std::string::npos);
    CHECK(text.find("Pressure-std") != std::string::npos);
    CHECK(text.find("\"node\"") != std::string::npos);
    CHECK(text.find("\"2\"") != std::string::npos);  // external label of node 1
    CHECK_THROWS_AS(explanation_to_json(m, sub, g, {"only-one"}), ShapeError);
}
