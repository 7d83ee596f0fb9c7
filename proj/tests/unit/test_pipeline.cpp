#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "leakgnn/errors.hpp"
#include "leakgnn/layers.hpp"
#include "leakgnn/pipeline.hpp"
#include "leakgnn/rules.hpp"

using namespace leakgnn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Path network small enough that every case runs in well under a second.
WdnGraph tiny_graph() {
    return from_edge_list(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
}

std::string fresh_dir(const std::string& name) {
    const fs::path p = fs::path("/tmp/leakgnn_pipeline") / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string make_corpus(const std::string& name, std::size_t scenarios,
                        std::uint64_t seed) {
    const std::string dir = fresh_dir(name);
    SynthConfig sc;
    sc.num_scenarios = scenarios;
    sc.num_steps = 48;
    sc.noise = 0.05;
    sc.leak_rate = 0.5;
    sc.seed = seed;
    const WdnGraph g = tiny_graph();
    write_scenarios(dir, g, synthesize_scenarios(g, sc));
    return dir;
}

// 8 scenarios x two 24-step windows -> 8/4/4 samples; a few cheap epochs.
RunConfig quick_run(const std::string& data, const std::string& out) {
    RunConfig cfg;
    cfg.data_dir = data;
    cfg.out_dir = out;
    cfg.window = {24, 24};
    cfg.model.layer = LayerKind::Gcn;
    cfg.model.depth = 2;
    cfg.model.hidden = 16;
    cfg.train_cfg.max_epochs = 12;
    cfg.train_cfg.batch_size = 8;
    cfg.train_cfg.lr = 0.01;
    cfg.train_frac = 0.5;
    cfg.val_frac = 0.25;
    cfg.test_frac = 0.25;
    cfg.seed = 3;
    return cfg;
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    REQUIRE_MESSAGE(in.good(), "missing file ", path);
    return json::parse(in);
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file ", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("prepare_data splits by scenario and standardizes with train statistics") {
    const std::string dir = make_corpus("prep", 8, 1);
    PreparedData d = prepare_data(dir, {24, 24}, {0.5, 0.25, 0.25, 7}, false);

    CHECK(d.split.train.size() == 8);
    CHECK(d.split.val.size() == 4);
    CHECK(d.split.test.size() == 4);
    CHECK(d.in_dim == 4);
    CHECK(d.edge_dim == 4);
    CHECK(d.input_labels == node_feature_names());
    CHECK(d.partitions.empty());

    std::vector<std::string> ids = d.train_ids;
    ids.insert(ids.end(), d.val_ids.begin(), d.val_ids.end());
    ids.insert(ids.end(), d.test_ids.begin(), d.test_ids.end());
    std::sort(ids.begin(), ids.end());
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
    CHECK(ids.size() == 8);

    // Standardization is fitted on the training split, so its pooled columns
    // come out with zero mean and unit (population) variance.
    const std::size_t n = d.graph.num_nodes;
    for (std::size_t c = 0; c < 4; ++c) {
        double sum = 0.0, count = 0.0;
        for (const Sample& s : d.split.train) {
            for (std::size_t v = 0; v < n; ++v) sum += s.node_features.at(v, c);
            count += static_cast<double>(n);
        }
        const double mean = sum / count;
        double var = 0.0;
        for (const Sample& s : d.split.train) {
            for (std::size_t v = 0; v < n; ++v) {
                const double e = s.node_features.at(v, c) - mean;
                var += e * e;
            }
        }
        var /= count;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }

    for (const auto* split : {&d.split.train, &d.split.val, &d.split.test}) {
        for (const Sample& s : *split) {
            const double any =
                *std::max_element(s.node_labels.begin(), s.node_labels.end());
            CHECK(s.graph_label == any);
        }
    }
}

TEST_CASE("prepare_data fuzzy path swaps crisp node features for memberships") {
    const std::string dir = make_corpus("prep_fuzzy", 8, 2);
    PreparedData d = prepare_data(dir, {24, 24}, {0.5, 0.25, 0.25, 7}, true);

    CHECK(d.in_dim == 12);
    CHECK(d.partitions.size() == 4);
    CHECK(d.input_labels.size() == 12);
    CHECK(d.input_labels[0] == "Pressure-mean-Low");
    CHECK(d.underlying_features == node_feature_names());

    const Sample& s = d.split.train.front();
    CHECK(s.node_features.shape() == std::vector<std::size_t>{5, 12});
    CHECK(s.edge_features.shape() == std::vector<std::size_t>{8, 4});  // stays crisp
    for (double v : s.node_features.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("prepare_with reapplies stored statistics bitwise") {
    const std::string dir = make_corpus("prep_with", 8, 3);
    PreparedData a = prepare_data(dir, {24, 24}, {0.5, 0.25, 0.25, 5}, true);
    PreparedData b = prepare_with(dir, {24, 24}, {0.5, 0.25, 0.25, 5}, a.node_scaler,
                                  a.edge_scaler, a.partitions);

    CHECK(b.test_ids == a.test_ids);
    CHECK(b.in_dim == a.in_dim);
    REQUIRE(b.split.test.size() == a.split.test.size());
    for (std::size_t i = 0; i < a.split.test.size(); ++i) {
        CHECK(b.split.test[i].node_features.values() ==
              a.split.test[i].node_features.values());
        CHECK(b.split.test[i].edge_features.values() ==
              a.split.test[i].edge_features.values());
    }
}

TEST_CASE("run_synth writes one directory per scenario and is reproducible") {
    RunConfig cfg;
    cfg.out_dir = fresh_dir("synth");
    cfg.seed = 9;
    cfg.synth.num_scenarios = 5;
    cfg.synth.num_steps = 24;

    SynthResult r = run_synth(cfg);
    CHECK(r.scenarios == 5);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "topology.csv"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "manifest.json"));
    std::size_t dirs = 0;
    for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
        dirs += e.is_directory() ? 1 : 0;
    }
    CHECK(dirs == 5);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "S0003" / "pressures.csv"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "S0003" / "flows.csv"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "S0003" / "leaks.json"));

    const std::string press = read_bytes(fs::path(cfg.out_dir) / "S0003" / "pressures.csv");
    const std::string manifest = read_bytes(fs::path(cfg.out_dir) / "manifest.json");
    run_synth(cfg);  // same flags -> same bytes
    CHECK(read_bytes(fs::path(cfg.out_dir) / "S0003" / "pressures.csv") == press);
    CHECK(read_bytes(fs::path(cfg.out_dir) / "manifest.json") == manifest);

    json m = json::parse(manifest);
    CHECK(m["topology"] == "hanoi");
    CHECK(m["run"]["command"] == "synth");
    CHECK(m["config"]["seed"] == 9);
}

TEST_CASE("run_train artifacts are reproduced exactly by run_evaluate") {
    const std::string data = make_corpus("train_crisp", 8, 4);
    RunConfig cfg = quick_run(data, fresh_dir("train_crisp_out"));
    TrainResult tr = run_train(cfg);

    CHECK(fs::exists(tr.checkpoint_path));
    json metrics = read_json(tr.metrics_path);
    CHECK(metrics["config"]["run"]["command"] == "train");
    CHECK(metrics["config"]["run"]["seed"] == 3);
    CHECK(metrics["config"]["model"]["layer"] == "gcn");
    CHECK(metrics["config"]["train"]["seed"] == 205);  // master seed + 202
    CHECK(metrics["graph_f1"] == tr.report.graph_f1);

    LoadedCheckpoint lc = load_checkpoint(tr.checkpoint_path);
    CHECK(lc.model.config.in_dim == 4);
    CHECK(lc.model.config.seed == 104);  // master seed + 101
    json extra = json::parse(lc.extra_json);
    CHECK(extra["window"]["length"] == 24);
    CHECK(extra["partitions"].is_null());
    CHECK(extra["split"]["seed"] == 3);

    RunConfig ev;
    ev.checkpoint = tr.checkpoint_path;
    ev.data_dir = data;
    ev.out_dir = cfg.out_dir;
    EvaluateResult er = run_evaluate(ev);
    CHECK(er.metrics.loss == tr.report.test_loss);
    CHECK(er.metrics.graph_f1 == tr.report.graph_f1);
    CHECK(!er.metrics.node_f1.has_value());

    json erep = read_json(er.report_path);
    CHECK(erep["threshold"] == 0.5);
    CHECK(erep["config"]["run"]["command"] == "evaluate");
    CHECK(erep["test_scenarios"].size() == 2);
}

TEST_CASE("fuzzy node-task checkpoints carry partitions and evaluate identically") {
    const std::string data = make_corpus("train_fuzzy", 8, 5);
    RunConfig cfg = quick_run(data, fresh_dir("train_fuzzy_out"));
    cfg.model.fuzzy = true;
    cfg.model.task = Task::NodeLocalization;
    TrainResult tr = run_train(cfg);

    LoadedCheckpoint lc = load_checkpoint(tr.checkpoint_path);
    CHECK(lc.model.config.in_dim == 12);
    CHECK(lc.model.config.fuzzy);
    json extra = json::parse(lc.extra_json);
    REQUIRE(extra["partitions"].is_array());
    CHECK(extra["partitions"].size() == 4);

    RunConfig ev;
    ev.checkpoint = tr.checkpoint_path;
    ev.data_dir = data;
    ev.out_dir = cfg.out_dir;
    EvaluateResult er = run_evaluate(ev);
    CHECK(er.metrics.loss == tr.report.test_loss);
    CHECK(er.metrics.graph_f1 == tr.report.graph_f1);
    REQUIRE(er.metrics.node_f1.has_value());
    REQUIRE(tr.report.node_f1.has_value());
    CHECK(*er.metrics.node_f1 == *tr.report.node_f1);
}

TEST_CASE("run_explain writes explanation artifacts and gates rules") {
    const std::string data = make_corpus("explain", 8, 6);

    RunConfig crisp = quick_run(data, fresh_dir("explain_crisp_out"));
    crisp.train_cfg.max_epochs = 4;
    TrainResult crisp_tr = run_train(crisp);

    RunConfig ex;
    ex.checkpoint = crisp_tr.checkpoint_path;
    ex.data_dir = data;
    ex.out_dir = fresh_dir("explain_out");
    ex.want_rules = true;
    CHECK_THROWS_WITH_AS(run_explain(ex), doctest::Contains("--fuzzy"), ConfigError);

    RunConfig fz = quick_run(data, fresh_dir("explain_fuzzy_out"));
    fz.model.fuzzy = true;
    fz.train_cfg.max_epochs = 4;
    TrainResult fz_tr = run_train(fz);

    ex.checkpoint = fz_tr.checkpoint_path;
    ex.top_k = 3;
    ex.mask_threshold = 0.01;
    ExplainResult res = run_explain(ex);
    CHECK(res.mask.pipe_mask.size() == 4);
    CHECK(res.mask.feature_mask.size() == 12);
    CHECK(res.window_start == 1);  // defaults to the scenario's first window

    json record = read_json(res.explanation_path);
    CHECK(record["scenario"] == res.scenario_id);
    CHECK(record["target"]["kind"] == "graph");
    CHECK(record["config"]["run"]["command"] == "explain");

    json rj = read_json(res.rule_path);
    if (res.rule) {
        CHECK(rj["rule"]["text"] == res.rule_text);
        const FuzzyRule parsed = parse_rule(res.rule_text);
        CHECK(parsed.antecedents.size() == res.rule->antecedents.size());
    } else {
        CHECK(rj["rule"].is_null());
    }

    // Node-level target keyed by external label.
    ex.target_node = "5";
    ExplainResult node_res = run_explain(ex);
    json node_record = read_json(node_res.explanation_path);
    CHECK(node_record["target"]["kind"] == "node");
    CHECK(node_record["target"]["node"] == "5");

    ex.target_node = "99";
    CHECK_THROWS_AS(run_explain(ex), ConfigError);
    ex.target_node.clear();
    ex.scenario = "nope";
    CHECK_THROWS_WITH_AS(run_explain(ex), doctest::Contains("not found"), ConfigError);
    ex.scenario.clear();
    ex.window_start = 9999;
    CHECK_THROWS_WITH_AS(run_explain(ex), doctest::Contains("window"), ConfigError);
}

TEST_CASE("run_tune writes one report per cell plus a ranked summary") {
    const std::string data = make_corpus("tune", 8, 7);
    RunConfig cfg = quick_run(data, fresh_dir("tune_out"));
    cfg.train_cfg.max_epochs = 4;
    cfg.grid.layers = {LayerKind::Gcn};
    cfg.grid.depths = {2};
    cfg.grid.hiddens = {16, 32};

    TuneResult t = run_tune(cfg);
    REQUIRE(t.grid.entries.size() == 2);
    CHECK(!t.grid.truncated);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "run-gcn-d2-h16.json"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "run-gcn-d2-h32.json"));

    json summary = read_json(t.summary_path);
    CHECK(summary["runs"].size() == 2);
    CHECK(summary["run"]["command"] == "tune");
    CHECK(summary["champion"]["val_graph_f1"] ==
          t.grid.entries[0].report.val_graph_f1);
}

TEST_CASE("pipeline surfaces configuration errors") {
    RunConfig cfg;
    CHECK_THROWS_AS(run_train(cfg), ConfigError);     // no data dir
    CHECK_THROWS_AS(run_evaluate(cfg), ConfigError);  // no checkpoint
    cfg.checkpoint = "/tmp/leakgnn_pipeline/no_such.ckpt";
    cfg.data_dir = "/tmp/leakgnn_pipeline/no_such_dir";
    CHECK_THROWS_AS(run_evaluate(cfg), FormatError);  // checkpoint missing

    // Window longer than every scenario leaves a split empty.
    const std::string data = make_corpus("short", 4, 8);
    CHECK_THROWS_AS(prepare_data(data, {64, 24}, {0.5, 0.25, 0.25, 1}, false),
                    ConfigError);
}
