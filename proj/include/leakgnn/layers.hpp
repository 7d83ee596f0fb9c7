#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>

#include "leakgnn/graph.hpp"
#include "leakgnn/tensor.hpp"

namespace leakgnn {

enum class LayerKind { Gcn, Sage, Gat, GatV2, Gen, Transformer };

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

// One message-passing layer.  Weight names by kind:
//   Gcn:         W [in,out]
//   Sage:        W [2*in,out]                  (self || neighbor-mean)
//   Gat:         W [in,out], a [2*out,1]
//   GatV2:       W [in,out], Wa [2*in,out], a [out,1]
//   Gen:         W1 [in,in], b1, W2 [in,out], b2, We [edge,in], be [in]
//   Transformer: Wq, Wk, Wv [in,out], We [edge,out]
// We/be exist only when edge_dim > 0; only Gen and Transformer accept edge
// features.  Gen requires out == in (residual update).
struct LayerParams {
    LayerKind kind = LayerKind::Gcn;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::size_t edge_dim = 0;
    double attention_slope = 0.2;  // LeakyReLU inside attention logits
    double gen_epsilon = 1e-7;     // keeps softmax-aggregated messages positive
    std::map<std::string, Tensor> weights;
};

// Glorot-uniform weights, zero biases, drawn from rng in a fixed name order.
LayerParams make_layer(LayerKind kind, std::size_t in_dim, std::size_t out_dim,
                       std::size_t edge_dim, std::mt19937_64& rng);

bool layer_uses_edge_features(LayerKind kind);

// Runs one layer over the graph.  x is [num_nodes, in_dim]; edge_feats is
// [num_edges, edge_dim] (empty when edge_dim == 0); edge_mask is an optional
// [num_edges] attenuation in [0,1] applied to messages (attention layers
// apply it after softmax normalization; appended self-loops stay unmasked).
// Returns the pre-activation output [num_nodes, out_dim].
Tensor layer_forward(const LayerParams& p, const WdnGraph& g, const Tensor& x,
                     const Tensor& edge_feats = Tensor(),
                     const Tensor& edge_mask = Tensor());

}  // namespace leakgnn
