#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "leakgnn/data.hpp"
#include "leakgnn/explain.hpp"
#include "leakgnn/fuzzy.hpp"
#include "leakgnn/graph.hpp"
#include "leakgnn/model.hpp"
#include "leakgnn/rules.hpp"
#include "leakgnn/train.hpp"

namespace leakgnn {

// Fully resolved settings for one command; flag parsing and config-file
// merging happen in the CLI, the pipeline only consumes the result.
struct RunConfig {
    std::string data_dir;
    std::string out_dir = "leakgnn-out";
    std::string checkpoint;   // evaluate / explain input
    std::string topology;     // synth: CSV path; empty = built-in Hanoi network
    WindowSpec window;
    ModelConfig model;        // layer/depth/hidden/task/fuzzy; widths are derived
    TrainConfig train_cfg;
    SynthConfig synth;
    GridSpec grid;
    std::size_t budget = 0;   // tune: max runs, 0 = full grid
    std::size_t jobs = 1;     // tune: concurrent runs
    double train_frac = 0.7, val_frac = 0.15, test_frac = 0.15;
    std::uint64_t seed = 0;   // master seed; per-stage streams derive from it
    ExplainOptions explain_opts;
    std::string scenario;        // explain: scenario id; empty = first test scenario
    std::size_t window_start = 0;  // explain: 1-based; 0 = scenario's first window
    std::string target_node;     // explain: node label; empty = graph-level target
    bool want_rules = false;
    std::size_t top_k = 4;       // explain: subgraph edge budget
    double mask_threshold = 0.5; // explain: subgraph mask cutoff
    bool allow_uninterpretable = false;  // accept partitions violating constraints
};

// A corpus cut into windows, split by scenario, normalized with train-split
// statistics, and optionally fuzzified (memberships replace crisp features).
struct PreparedData {
    WdnGraph graph;
    DataSplit split;
    FeatureScaler node_scaler, edge_scaler;
    std::vector<FuzzyPartition> partitions;        // empty for crisp runs
    std::vector<std::string> input_labels;         // model input column names
    std::vector<std::string> underlying_features;  // crisp node feature names
    std::vector<std::string> train_ids, val_ids, test_ids;
    std::size_t in_dim = 4, edge_dim = 4;
};

struct SplitSpec {
    double train = 0.7, val = 0.15, test = 0.15;
    std::uint64_t seed = 0;
};

// Ingests, splits, fits scalers (and partitions when fuzzy) on the training
// split, and transforms every split.
PreparedData prepare_data(const std::string& data_dir, WindowSpec window,
                          SplitSpec split, bool fuzzy);

// Same shaping but applying previously fitted scalers and partitions, as
// stored in a checkpoint (fuzzy when `partitions` is non-empty).
PreparedData prepare_with(const std::string& data_dir, WindowSpec window,
                          SplitSpec split, const FeatureScaler& node_scaler,
                          const FeatureScaler& edge_scaler,
                          const std::vector<FuzzyPartition>& partitions);

struct SynthResult {
    std::string dir;
    std::size_t scenarios = 0;
};

// Synthesizes a corpus into cfg.out_dir using cfg.synth (cfg.topology
// optionally overrides the built-in network).
SynthResult run_synth(const RunConfig& cfg);

struct TrainResult {
    MetricsReport report;
    std::string checkpoint_path;
    std::string metrics_path;
};

// Trains one configuration and writes checkpoint.ckpt plus metrics.json.
TrainResult run_train(const RunConfig& cfg);

struct TuneResult {
    GridResult grid;
    std::string summary_path;
};

// Grid search over cfg.grid; writes one report per run plus summary.json.
TuneResult run_tune(const RunConfig& cfg);

struct EvaluateResult {
    EvalResult metrics;
    std::string report_path;
};

// Re-evaluates a checkpoint on the test split reconstructed from its stored
// window, split, and scaling settings; writes evaluation.json.
EvaluateResult run_evaluate(const RunConfig& cfg);

struct ExplainResult {
    ExplanationMask mask;
    Subgraph subgraph;
    std::optional<FuzzyRule> rule;
    std::string rule_text;  // rendered when a rule was extracted
    std::optional<double> fidelity;
    std::string explanation_path;
    std::string rule_path;  // empty unless rules were requested
    std::string scenario_id;
    std::size_t window_start = 0;
};

// Explains one sample of the corpus under a frozen checkpoint; with
// cfg.want_rules additionally extracts and renders a fuzzy rule (requires a
// fuzzified model).  Writes explanation.json (and rule.json).
ExplainResult run_explain(const RunConfig& cfg);

}  // namespace leakgnn
