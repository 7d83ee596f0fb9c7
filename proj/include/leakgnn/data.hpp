#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "leakgnn/graph.hpp"
#include "leakgnn/tensor.hpp"

namespace leakgnn {

// One leak: a node losing pressure over an inclusive 1-based step interval.
struct LeakEvent {
    std::size_t node = 0;
    std::size_t start = 0;
    std::size_t end = 0;
    double severity = 0.0;

    bool operator==(const LeakEvent&) const = default;
};

// One simulated operating period of a network: pressure per node and flow
// per pipe at every timestep, plus zero or more leak events.  Timesteps are
// 1-based in all external interfaces.
struct Scenario {
    std::string id;
    std::size_t num_steps = 0;
    std::vector<double> pressure;  // [num_steps x num_nodes] row-major
    std::vector<double> flow;      // [num_steps x num_pipes] row-major
    std::vector<LeakEvent> leaks;
};

struct WindowSpec {
    std::size_t length = 48;
    std::size_t stride = 24;
};

// 1-based window start positions k with k + length - 1 <= num_steps.
// Empty when the series is shorter than one window.
std::vector<std::size_t> window_starts(std::size_t num_steps, WindowSpec spec);

struct WindowStats {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
    double min = 0.0;
    double max = 0.0;
};

WindowStats window_stats(const double* data, std::size_t n);

// Feature column names in tensor order.
std::vector<std::string> node_feature_names();  // Pressure-mean ... Pressure-max
std::vector<std::string> edge_feature_names();  // Flow-mean ... Flow-max

// One training sample: a window summarized into per-node and per-edge stats.
struct Sample {
    Tensor node_features;            // [num_nodes, 4]
    Tensor edge_features;            // [num_directed_edges, 4]
    std::vector<double> node_labels; // 0/1 per node
    double graph_label = 0.0;
    std::size_t window_start = 0;    // 1-based
    std::string scenario_id;
    std::size_t leak_node = 0;       // first overlapping event's node;
                                     // SIZE_MAX when the window has no leak
};

// Cuts a scenario into windows.  A node is positive when some leak event at
// it overlaps the window by at least one step; the graph label is the OR
// over nodes.  Edge stats are duplicated onto both directed slots of a pipe.
std::vector<Sample> build_samples(const WdnGraph& g, const Scenario& s,
                                  WindowSpec spec);

// Synthetic scenario generator: per-node baseline offsets, a shared 48-step
// diurnal sinusoid, Gaussian sensor noise, and for leaky scenarios a
// pressure drop that decays exponentially with hop distance from the leak.
struct SynthConfig {
    std::size_t num_scenarios = 50;
    std::size_t num_steps = 240;
    double leak_rate = 0.8;        // fraction of scenarios containing a leak
    double noise = 0.1;            // sensor noise standard deviation
    std::uint64_t seed = 0;
    double severity_min = 4.0;
    double severity_max = 6.0;
    double duration_min = 0.4;     // leak duration as a fraction of num_steps
    double duration_max = 0.7;
    double base_pressure = 50.0;
    double offset_spread = 2.0;    // per-node baseline spread (uniform +-);
                                   // kept below severity_min so a leak's drop
                                   // dominates natural baseline variation
    double diurnal_amplitude = 1.0;
    double base_flow = 10.0;
    double flow_offset_spread = 2.0;
    double flow_response = 1.0;    // flow increase per unit leak severity
    double decay_hops = 1.25;      // e-folding distance of the pressure drop
};

std::vector<Scenario> synthesize_scenarios(const WdnGraph& g, const SynthConfig& cfg);

// Corpus directory layout (one subdirectory per scenario):
//   dir/topology.csv
//   dir/manifest.json
//   dir/<id>/pressures.csv   header = node ids, one row per timestep
//   dir/<id>/flows.csv       header = pipe ids
//   dir/<id>/leaks.json      array of {node, start, end, severity}
void write_scenarios(const std::string& dir, const WdnGraph& g,
                     const std::vector<Scenario>& scenarios,
                     const std::string& manifest_json = "{}");

struct IngestResult {
    WdnGraph topology;
    std::vector<Scenario> scenarios;
    std::size_t skipped = 0;                // malformed scenario directories
    std::vector<std::string> diagnostics;   // one message per skipped entry
};

// Loads a corpus directory.  Malformed scenario directories are skipped
// with a diagnostic; a missing or invalid topology, or a corpus with no
// valid scenario, raises FormatError.
IngestResult ingest_scenarios(const std::string& dir);

// Scenario-level split.  Fractions must be positive and sum to 1; counts
// use largest-remainder rounding with ties going to the earlier split, and
// every split must end up non-empty.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

SplitIndices split_scenarios(std::size_t n, double train_frac, double val_frac,
                             double test_frac, std::uint64_t seed);

// Per-column standardization fitted on training features only.
struct FeatureScaler {
    std::vector<double> mean;
    std::vector<double> stddev;  // columns with ~zero spread divide by 1

    static FeatureScaler fit(const std::vector<Tensor>& mats);
    Tensor transform(const Tensor& x) const;
};

}  // namespace leakgnn
