#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "leakgnn/graph.hpp"
#include "leakgnn/layers.hpp"
#include "leakgnn/tensor.hpp"

namespace leakgnn {

enum class Task { GraphDetection, NodeLocalization };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

struct ModelConfig {
    LayerKind layer = LayerKind::Gen;
    std::size_t depth = 2;    // number of message-passing layers: 2, 4, or 8
    std::size_t hidden = 32;  // channel width: 16, 32, or 64
    std::size_t in_dim = 4;   // input node feature width (12 when fuzzified)
    std::size_t edge_dim = 0; // edge feature width; only gen/transformer accept > 0
    Task task = Task::GraphDetection;
    bool fuzzy = false;       // inputs are fuzzy memberships
    std::uint64_t seed = 0;   // weight initialization stream
};

// Rejects configurations outside the supported search space.
void validate_config(const ModelConfig& cfg);

// Backbone of `depth` identical-width message-passing layers, each followed
// by layer normalization and LeakyReLU(0.01), between an input projection
// and a single affine head.  Graph detection pools node embeddings by mean
// before the head; node localization applies the head per node, and its
// graph-level reading is the max over node logits.
struct LeakModel {
    ModelConfig config;
    Tensor in_w, in_b;
    std::vector<LayerParams> layers;
    std::vector<Tensor> norm_gain, norm_bias;
    Tensor head_w, head_b;

    static LeakModel init(const ModelConfig& cfg);

    // Stable name -> tensor view of every trainable parameter.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::size_t num_parameters() const;

    // Node embeddings [num_nodes, hidden] after the full backbone.
    Tensor embed(const WdnGraph& g, const Tensor& x, const Tensor& edge_feats,
                 const Tensor& edge_mask = Tensor()) const;

    // Per-node logits [num_nodes].
    Tensor node_logits(const WdnGraph& g, const Tensor& x, const Tensor& edge_feats,
                       const Tensor& edge_mask = Tensor()) const;

    // Per-graph logits [num_graphs] for a (possibly batched) graph.  Uses
    // mean pooling for the detection task and the max over node logits for
    // the localization task.
    Tensor graph_logits(const WdnGraph& g, const Tensor& x, const Tensor& edge_feats,
                        const std::vector<std::size_t>& graph_of_node,
                        std::size_t num_graphs,
                        const Tensor& edge_mask = Tensor()) const;
};

// Config as a JSON object string; model_config_from_json accepts exactly
// this form and validates the result.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Checkpoint: 8-byte magic "LEAKGNN1", a uint64 little-endian JSON byte
// length, the JSON header (format version, model config, caller metadata,
// array directory), then all parameter values as float64 little-endian in
// directory order.  `extra_json` must be a JSON object; it travels with the
// model and comes back verbatim on load.
void save_checkpoint(const std::string& path, const LeakModel& model,
                     const std::string& extra_json = "{}");

struct LoadedCheckpoint {
    LeakModel model;
    std::string extra_json;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace leakgnn
