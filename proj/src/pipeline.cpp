#include "leakgnn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <utility>

#include <json.hpp>

#include "leakgnn/errors.hpp"
#include "leakgnn/layers.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace leakgnn {

namespace {

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
    if (text.empty() || text.back() != '\n') out << "\n";
}

json scaler_json(const FeatureScaler& s) {
    return {{"mean", s.mean}, {"stddev", s.stddev}};
}

FeatureScaler scaler_from_json(const json& j, const std::string& what) {
    if (!j.is_object() || !j.contains("mean") || !j.contains("stddev")) {
        throw FormatError("checkpoint metadata: malformed " + what);
    }
    FeatureScaler s;
    try {
        s.mean = j["mean"].get<std::vector<double>>();
        s.stddev = j["stddev"].get<std::vector<double>>();
    } catch (const json::exception&) {
        throw FormatError("checkpoint metadata: malformed " + what);
    }
    if (s.mean.empty() || s.mean.size() != s.stddev.size()) {
        throw FormatError("checkpoint metadata: malformed " + what);
    }
    return s;
}

// Flag-derived settings echoed into every artifact; contains nothing
// volatile, so emitted bytes stay reproducible per (config, seed).
json run_echo(const RunConfig& cfg, const char* command) {
    json j;
    j["command"] = command;
    j["data"] = cfg.data_dir;
    j["out"] = cfg.out_dir;
    j["seed"] = cfg.seed;
    j["window"] = {{"length", cfg.window.length}, {"stride", cfg.window.stride}};
    j["split"] = {{"train", cfg.train_frac}, {"val", cfg.val_frac}, {"test", cfg.test_frac}};
    j["fuzzy"] = cfg.model.fuzzy;
    return j;
}

// Widths come from the prepared data, never from flags; per-stage seeds are
// fixed offsets of the master seed so streams stay independent.
ModelConfig resolved_model(const RunConfig& cfg, const PreparedData& d) {
    ModelConfig mc = cfg.model;
    mc.in_dim = d.in_dim;
    mc.edge_dim = layer_uses_edge_features(mc.layer) ? d.edge_dim : 0;
    mc.seed = cfg.seed + 101;
    validate_config(mc);
    return mc;
}

TrainConfig resolved_train(const RunConfig& cfg) {
    TrainConfig tc = cfg.train_cfg;
    tc.seed = cfg.seed + 202;
    validate_train_config(tc);
    return tc;
}

void gate_partitions(const std::vector<FuzzyPartition>& parts, bool allow) {
    for (const auto& p : parts) {
        const ConstraintReport r = check_constraints(p);
        if (r.ok()) continue;
        std::string which;
        if (!r.normality) which = "normality";
        else if (!r.convexity) which = "convexity";
        else if (!r.coverage) which = "coverage";
        else which = "distinguishability";
        if (allow) continue;
        throw ConfigError("fuzzy partition for \"" + p.feature + "\" violates the " +
                          which + " constraint, so extracted rules would not be "
                          "interpretable; pass --allow-uninterpretable to proceed");
    }
}

void check_widths(const ModelConfig& mc, const PreparedData& d) {
    if (mc.in_dim != d.in_dim) {
        throw ConfigError("checkpoint expects " + std::to_string(mc.in_dim) +
                          " node-feature columns but this corpus produces " +
                          std::to_string(d.in_dim));
    }
    if (mc.edge_dim != 0 && mc.edge_dim != d.edge_dim) {
        throw ConfigError("checkpoint expects " + std::to_string(mc.edge_dim) +
                          " edge-feature columns but this corpus produces " +
                          std::to_string(d.edge_dim));
    }
}

// Window, split, scalers, partitions, and training settings a checkpoint
// needs to rebuild the exact data view it was trained on.
struct StoredRun {
    WindowSpec window;
    SplitSpec split;
    FeatureScaler node_scaler, edge_scaler;
    std::vector<FuzzyPartition> partitions;
    TrainConfig train_cfg;
};

json stored_run_json(const RunConfig& cfg, const PreparedData& d, const TrainConfig& tc,
                     const ModelConfig& mc) {
    json extra;
    extra["window"] = {{"length", cfg.window.length}, {"stride", cfg.window.stride}};
    extra["split"] = {{"train", cfg.train_frac},
                      {"val", cfg.val_frac},
                      {"test", cfg.test_frac},
                      {"seed", cfg.seed}};
    extra["node_scaler"] = scaler_json(d.node_scaler);
    extra["edge_scaler"] = scaler_json(d.edge_scaler);
    extra["partitions"] = d.partitions.empty()
                              ? json(nullptr)
                              : json::parse(partitions_to_json(d.partitions));
    extra["train"] = json::parse(config_to_json(mc, tc))["train"];
    extra["data"] = cfg.data_dir;
    return extra;
}

StoredRun parse_stored_run(const std::string& extra_json, const std::string& path) {
    json extra;
    try {
        extra = json::parse(extra_json);
    } catch (const json::exception& e) {
        throw FormatError(path + ": checkpoint metadata is not valid JSON: " + e.what());
    }
    for (const char* key : {"window", "split", "node_scaler", "edge_scaler", "train"}) {
        if (!extra.contains(key)) {
            throw FormatError(path + ": checkpoint metadata is missing \"" +
                              std::string(key) + "\"");
        }
    }
    StoredRun sr;
    try {
        sr.window.length = extra["window"].at("length").get<std::size_t>();
        sr.window.stride = extra["window"].at("stride").get<std::size_t>();
        sr.split.train = extra["split"].at("train").get<double>();
        sr.split.val = extra["split"].at("val").get<double>();
        sr.split.test = extra["split"].at("test").get<double>();
        sr.split.seed = extra["split"].at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw FormatError(path + ": checkpoint metadata: " + std::string(e.what()));
    }
    sr.node_scaler = scaler_from_json(extra["node_scaler"], "node_scaler");
    sr.edge_scaler = scaler_from_json(extra["edge_scaler"], "edge_scaler");
    if (extra.contains("partitions") && !extra["partitions"].is_null()) {
        sr.partitions = partitions_from_json(extra["partitions"].dump());
    }
    const json& t = extra["train"];
    TrainConfig d;  // missing keys keep their defaults
    sr.train_cfg.lr = t.value("lr", d.lr);
    sr.train_cfg.batch_size = t.value("batch_size", d.batch_size);
    sr.train_cfg.max_epochs = t.value("max_epochs", d.max_epochs);
    sr.train_cfg.patience = t.value("patience", d.patience);
    sr.train_cfg.clip_norm = t.value("clip_norm", d.clip_norm);
    sr.train_cfg.weight_decay = t.value("weight_decay", d.weight_decay);
    sr.train_cfg.scheduler_factor = t.value("scheduler_factor", d.scheduler_factor);
    sr.train_cfg.scheduler_patience = t.value("scheduler_patience", d.scheduler_patience);
    sr.train_cfg.min_lr = t.value("min_lr", d.min_lr);
    sr.train_cfg.scheduler_threshold = t.value("scheduler_threshold", d.scheduler_threshold);
    sr.train_cfg.beta1 = t.value("beta1", d.beta1);
    sr.train_cfg.beta2 = t.value("beta2", d.beta2);
    sr.train_cfg.eps = t.value("eps", d.eps);
    sr.train_cfg.threshold = t.value("threshold", d.threshold);
    sr.train_cfg.auto_pos_weight = t.value("auto_pos_weight", d.auto_pos_weight);
    sr.train_cfg.seed = t.value("seed", d.seed);
    return sr;
}

// Shared shaping: ingest, split by scenario, window, standardize, and
// optionally fuzzify.  Fit statistics come from the training split unless
// previously fitted ones are supplied.
PreparedData shape_corpus(const std::string& dir, WindowSpec window, SplitSpec split,
                          bool fuzzy, const FeatureScaler* node_sc,
                          const FeatureScaler* edge_sc,
                          const std::vector<FuzzyPartition>* parts) {
    IngestResult in = ingest_scenarios(dir);
    const SplitIndices idx = split_scenarios(in.scenarios.size(), split.train,
                                             split.val, split.test, split.seed);

    PreparedData d;
    d.graph = in.topology;
    auto collect = [&](const std::vector<std::size_t>& which,
                       std::vector<std::string>& ids) {
        std::vector<Sample> out;
        for (std::size_t i : which) {
            ids.push_back(in.scenarios[i].id);
            auto part = build_samples(d.graph, in.scenarios[i], window);
            out.insert(out.end(), std::make_move_iterator(part.begin()),
                       std::make_move_iterator(part.end()));
        }
        return out;
    };
    d.split.train = collect(idx.train, d.train_ids);
    d.split.val = collect(idx.val, d.val_ids);
    d.split.test = collect(idx.test, d.test_ids);
    if (d.split.train.empty() || d.split.val.empty() || d.split.test.empty()) {
        throw ConfigError("a split produced no samples; the window length (" +
                          std::to_string(window.length) +
                          ") exceeds some scenario's step count");
    }

    if (node_sc) {
        d.node_scaler = *node_sc;
        d.edge_scaler = *edge_sc;
    } else {
        std::vector<Tensor> nmats, emats;
        for (const Sample& s : d.split.train) {
            nmats.push_back(s.node_features);
            emats.push_back(s.edge_features);
        }
        d.node_scaler = FeatureScaler::fit(nmats);
        d.edge_scaler = FeatureScaler::fit(emats);
    }
    auto standardize = [&](std::vector<Sample>& ss) {
        for (Sample& s : ss) {
            s.node_features = d.node_scaler.transform(s.node_features);
            s.edge_features = d.edge_scaler.transform(s.edge_features);
        }
    };
    standardize(d.split.train);
    standardize(d.split.val);
    standardize(d.split.test);

    d.underlying_features = node_feature_names();
    d.edge_dim = edge_feature_names().size();
    if (fuzzy) {
        if (parts) {
            d.partitions = *parts;
        } else {
            std::vector<Tensor> nmats;
            for (const Sample& s : d.split.train) nmats.push_back(s.node_features);
            d.partitions = build_partitions(nmats, d.underlying_features);
        }
        auto membership_features = [&](std::vector<Sample>& ss) {
            for (Sample& s : ss) {
                s.node_features = fuzzify(s.node_features, d.partitions);
            }
        };
        membership_features(d.split.train);
        membership_features(d.split.val);
        membership_features(d.split.test);
        d.input_labels = fuzzified_names(d.underlying_features);
    } else {
        d.input_labels = d.underlying_features;
    }
    d.in_dim = d.input_labels.size();
    return d;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

// Model probability for one target on one sample (no masking).
double target_probability(const LeakModel& model, const WdnGraph& g, const Sample& s,
                          const ExplainTarget& target) {
    double logit = 0.0;
    if (target.graph_level) {
        const std::vector<std::size_t> graph_of_node(g.num_nodes, 0);
        logit = model.graph_logits(g, s.node_features, s.edge_features, graph_of_node, 1)
                    .at(0);
    } else {
        logit = model.node_logits(g, s.node_features, s.edge_features).at(target.node);
    }
    return stable_sigmoid(logit);
}

}  // namespace

PreparedData prepare_data(const std::string& data_dir, WindowSpec window,
                          SplitSpec split, bool fuzzy) {
    return shape_corpus(data_dir, window, split, fuzzy, nullptr, nullptr, nullptr);
}

PreparedData prepare_with(const std::string& data_dir, WindowSpec window,
                          SplitSpec split, const FeatureScaler& node_scaler,
                          const FeatureScaler& edge_scaler,
                          const std::vector<FuzzyPartition>& partitions) {
    return shape_corpus(data_dir, window, split, !partitions.empty(), &node_scaler,
                        &edge_scaler, partitions.empty() ? nullptr : &partitions);
}

SynthResult run_synth(const RunConfig& cfg) {
    require(!cfg.out_dir.empty(), "synth needs an output directory");

    WdnGraph loaded;
    const WdnGraph* g = &hanoi();
    if (!cfg.topology.empty()) {
        loaded = load_topology(cfg.topology);
        g = &loaded;
    }

    SynthConfig sc = cfg.synth;
    sc.seed = cfg.seed;
    const auto scenarios = synthesize_scenarios(*g, sc);

    json manifest;
    manifest["topology"] = cfg.topology.empty() ? "hanoi" : cfg.topology;
    manifest["scenarios"] = scenarios.size();
    manifest["config"] = {{"num_scenarios", sc.num_scenarios},
                          {"num_steps", sc.num_steps},
                          {"leak_rate", sc.leak_rate},
                          {"noise", sc.noise},
                          {"seed", sc.seed},
                          {"severity_min", sc.severity_min},
                          {"severity_max", sc.severity_max},
                          {"duration_min", sc.duration_min},
                          {"duration_max", sc.duration_max},
                          {"base_pressure", sc.base_pressure},
                          {"offset_spread", sc.offset_spread},
                          {"diurnal_amplitude", sc.diurnal_amplitude},
                          {"base_flow", sc.base_flow},
                          {"flow_offset_spread", sc.flow_offset_spread},
                          {"flow_response", sc.flow_response},
                          {"decay_hops", sc.decay_hops}};
    manifest["run"] = run_echo(cfg, "synth");
    write_scenarios(cfg.out_dir, *g, scenarios, manifest.dump());
    return {cfg.out_dir, scenarios.size()};
}

TrainResult run_train(const RunConfig& cfg) {
    require(!cfg.data_dir.empty(), "train needs a data directory (--data)");

    PreparedData d = prepare_data(
        cfg.data_dir, cfg.window,
        {cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.seed}, cfg.model.fuzzy);
    gate_partitions(d.partitions, cfg.allow_uninterpretable);

    const ModelConfig mc = resolved_model(cfg, d);
    const TrainConfig tc = resolved_train(cfg);
    LeakModel model = LeakModel::init(mc);

    TrainResult res;
    res.report = train(model, d.graph, d.split, tc);
    json cj = json::parse(res.report.config_json);
    cj["run"] = run_echo(cfg, "train");
    res.report.config_json = cj.dump();

    fs::create_directories(cfg.out_dir);
    res.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.ckpt").string();
    save_checkpoint(res.checkpoint_path, model, stored_run_json(cfg, d, tc, mc).dump());
    res.metrics_path = (fs::path(cfg.out_dir) / "metrics.json").string();
    write_text(res.metrics_path, res.report.to_json());
    return res;
}

TuneResult run_tune(const RunConfig& cfg) {
    require(!cfg.data_dir.empty(), "tune needs a data directory (--data)");

    PreparedData d = prepare_data(
        cfg.data_dir, cfg.window,
        {cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.seed}, cfg.model.fuzzy);
    gate_partitions(d.partitions, cfg.allow_uninterpretable);

    ModelConfig base = cfg.model;
    base.in_dim = d.in_dim;
    base.edge_dim = d.edge_dim;  // zeroed per cell for layers without edge input
    base.seed = cfg.seed + 101;
    const TrainConfig tc = resolved_train(cfg);

    TuneResult res;
    res.grid = grid_search(d.graph, d.split, base, tc, cfg.grid, cfg.budget, cfg.jobs);

    fs::create_directories(cfg.out_dir);
    for (const GridEntry& e : res.grid.entries) {
        MetricsReport rep = e.report;
        json cj = json::parse(rep.config_json);
        cj["run"] = run_echo(cfg, "tune");
        rep.config_json = cj.dump();
        const std::string name = "run-" + layer_kind_name(e.config.layer) + "-d" +
                                 std::to_string(e.config.depth) + "-h" +
                                 std::to_string(e.config.hidden) + ".json";
        write_text(fs::path(cfg.out_dir) / name, rep.to_json());
    }
    json summary = json::parse(res.grid.to_json());
    summary["run"] = run_echo(cfg, "tune");
    res.summary_path = (fs::path(cfg.out_dir) / "summary.json").string();
    write_text(res.summary_path, summary.dump(2));
    return res;
}

EvaluateResult run_evaluate(const RunConfig& cfg) {
    require(!cfg.checkpoint.empty(), "evaluate needs a checkpoint (--checkpoint)");
    require(!cfg.data_dir.empty(), "evaluate needs a data directory (--data)");

    LoadedCheckpoint lc = load_checkpoint(cfg.checkpoint);
    const StoredRun sr = parse_stored_run(lc.extra_json, cfg.checkpoint);
    PreparedData d = prepare_with(cfg.data_dir, sr.window, sr.split, sr.node_scaler,
                                  sr.edge_scaler, sr.partitions);
    check_widths(lc.model.config, d);

    double pos_weight = 1.0;
    if (lc.model.config.task == Task::NodeLocalization && sr.train_cfg.auto_pos_weight) {
        pos_weight = node_pos_weight(d.split.train);
    }
    EvaluateResult res;
    res.metrics = evaluate(lc.model, d.graph, d.split.test, sr.train_cfg.threshold,
                           pos_weight, sr.train_cfg.batch_size);

    json rep;
    rep["graph_f1"] = res.metrics.graph_f1;
    rep["node_f1"] = res.metrics.node_f1 ? json(*res.metrics.node_f1) : json(nullptr);
    rep["test_loss"] = res.metrics.loss;
    rep["threshold"] = sr.train_cfg.threshold;
    rep["test_scenarios"] = d.test_ids;
    rep["checkpoint"] = cfg.checkpoint;
    rep["config"] = {{"model", json::parse(model_config_to_json(lc.model.config))},
                     {"train", json::parse(lc.extra_json)["train"]},
                     {"run", run_echo(cfg, "evaluate")}};
    fs::create_directories(cfg.out_dir);
    res.report_path = (fs::path(cfg.out_dir) / "evaluation.json").string();
    write_text(res.report_path, rep.dump(2));
    return res;
}

ExplainResult run_explain(const RunConfig& cfg) {
    require(!cfg.checkpoint.empty(), "explain needs a checkpoint (--checkpoint)");
    require(!cfg.data_dir.empty(), "explain needs a data directory (--data)");

    LoadedCheckpoint lc = load_checkpoint(cfg.checkpoint);
    if (cfg.want_rules && !lc.model.config.fuzzy) {
        throw ConfigError(
            "rule extraction needs fuzzified features, but this checkpoint was "
            "trained on crisp features; retrain with --fuzzy to use --rules");
    }
    const StoredRun sr = parse_stored_run(lc.extra_json, cfg.checkpoint);
    PreparedData d = prepare_with(cfg.data_dir, sr.window, sr.split, sr.node_scaler,
                                  sr.edge_scaler, sr.partitions);
    check_widths(lc.model.config, d);

    ExplainResult res;
    res.scenario_id = cfg.scenario.empty() ? d.test_ids.front() : cfg.scenario;

    // Samples are searched test-first so the default explains held-out data.
    const Sample* chosen = nullptr;
    bool scenario_seen = false;
    for (const auto* split : {&d.split.test, &d.split.val, &d.split.train}) {
        for (const Sample& s : *split) {
            if (s.scenario_id != res.scenario_id) continue;
            scenario_seen = true;
            if (cfg.window_start == 0 || s.window_start == cfg.window_start) {
                chosen = &s;
                break;
            }
        }
        if (chosen) break;
    }
    if (!chosen) {
        if (scenario_seen) {
            throw ConfigError("scenario \"" + res.scenario_id +
                              "\" has no window starting at step " +
                              std::to_string(cfg.window_start));
        }
        throw ConfigError("scenario \"" + res.scenario_id + "\" not found in " +
                          cfg.data_dir);
    }
    res.window_start = chosen->window_start;

    ExplainTarget target = ExplainTarget::graph();
    if (!cfg.target_node.empty()) {
        const auto it = std::find(d.graph.node_ids.begin(), d.graph.node_ids.end(),
                                  cfg.target_node);
        if (it == d.graph.node_ids.end()) {
            throw ConfigError("node \"" + cfg.target_node + "\" not in the topology");
        }
        target = ExplainTarget::at_node(
            static_cast<std::size_t>(it - d.graph.node_ids.begin()));
    }

    ExplainOptions opts = cfg.explain_opts;
    opts.seed = cfg.seed + 303;
    res.mask = explain(lc.model, d.graph, *chosen, target, opts);
    res.subgraph = extract_subgraph(res.mask, d.graph, cfg.top_k, cfg.mask_threshold);

    json record = json::parse(
        explanation_to_json(res.mask, res.subgraph, d.graph, d.input_labels));
    record["scenario"] = res.scenario_id;
    record["window_start"] = res.window_start;
    record["checkpoint"] = cfg.checkpoint;
    record["config"] = {{"model", json::parse(model_config_to_json(lc.model.config))},
                        {"run", run_echo(cfg, "explain")}};
    fs::create_directories(cfg.out_dir);
    res.explanation_path = (fs::path(cfg.out_dir) / "explanation.json").string();
    write_text(res.explanation_path, record.dump(2));

    if (!cfg.want_rules) return res;

    const double prob = target_probability(lc.model, d.graph, *chosen, target);
    res.rule = extract_rule(res.subgraph, res.mask, d.graph, chosen->node_features,
                            d.underlying_features, prob);
    json rj;
    if (res.rule) {
        res.rule_text = render_rule(*res.rule);
        if (d.split.test.size() >= 10) {
            std::vector<double> firing, probs;
            for (const Sample& s : d.split.test) {
                firing.push_back(
                    firing_strength_on(*res.rule, s.node_features, d.underlying_features));
                probs.push_back(target_probability(lc.model, d.graph, s, target));
            }
            res.fidelity = rule_fidelity(firing, probs);
        }
        rj["rule"] = json::parse(rule_to_json(*res.rule));
        rj["fidelity"] = res.fidelity ? json(*res.fidelity) : json(nullptr);
    } else {
        rj["rule"] = nullptr;
        rj["reason"] = "no pipe mask exceeded the threshold, so there is no "
                       "subgraph to ground a rule in";
    }
    rj["scenario"] = res.scenario_id;
    rj["window_start"] = res.window_start;
    rj["config"] = {{"model", json::parse(model_config_to_json(lc.model.config))},
                    {"run", run_echo(cfg, "explain")}};
    res.rule_path = (fs::path(cfg.out_dir) / "rule.json").string();
    write_text(res.rule_path, rj.dump(2));
    return res;
}

}  // namespace leakgnn
