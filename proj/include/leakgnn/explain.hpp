#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "leakgnn/data.hpp"
#include "leakgnn/graph.hpp"
#include "leakgnn/model.hpp"
#include "leakgnn/tensor.hpp"

namespace leakgnn {

// What a mask explains: one node's logit or the whole-graph logit.
struct ExplainTarget {
    bool graph_level = true;
    std::size_t node = 0;  // used when graph_level is false

    static ExplainTarget graph() { return {true, 0}; }
    static ExplainTarget at_node(std::size_t v) { return {false, v}; }
};

struct ExplainOptions {
    std::size_t steps = 100;
    double lr = 0.01;
    double lambda_size = 0.005;    // pushes masks toward sparsity
    double lambda_entropy = 1.0;   // pushes masks away from 0.5
    std::uint64_t seed = 0;        // mask initialization jitter
};

// Learned attribution for one sample.  Edge values are stored per undirected
// pipe and expanded identically onto both directed orientations; feature
// values are stored per input column.
struct ExplanationMask {
    std::vector<double> pipe_mask;      // [num_pipes] in [0,1]
    std::vector<double> edge_mask;      // [num_directed_edges], pipe value on both slots
    std::vector<double> feature_mask;   // [in_dim] in [0,1]
    ExplainTarget target;
    bool converged = false;             // final objective not above the initial one
    double final_objective = 0.0;
    std::vector<double> objective_trace;  // one entry per step, starting value first
};

// Learns sigmoid-squashed edge and feature masks that keep the frozen
// model's prediction while shrinking: the objective is BCE against the
// model's own hard prediction plus size and entropy penalties.  Model
// parameters are never touched.
ExplanationMask explain(const LeakModel& model, const WdnGraph& g, const Sample& sample,
                        const ExplainTarget& target, const ExplainOptions& opts = {});

// Edges selected from a mask: the top-k pipes by mask value that also exceed
// the threshold; ties order by (low endpoint, high endpoint).  May be empty.
struct Subgraph {
    std::vector<std::size_t> pipes;  // selected pipe indices, ranked
    std::vector<std::size_t> nodes;  // endpoint union, ascending
    bool empty = true;
};

Subgraph extract_subgraph(const ExplanationMask& mask, const WdnGraph& g,
                          std::size_t k, double threshold);

// Input columns ordered by feature-mask value descending; ties keep the
// original column order.
std::vector<std::size_t> rank_features(const ExplanationMask& mask);

// JSON record: target, per-pipe mask keyed by pipe id, per-feature mask
// keyed by name, the selected subgraph, and the objective trace.
std::string explanation_to_json(const ExplanationMask& mask, const Subgraph& sub,
                                const WdnGraph& g,
                                const std::vector<std::string>& feature_names,
                                int indent = 2);

}  // namespace leakgnn
