#include "leakgnn/layers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "leakgnn/errors.hpp"

namespace leakgnn {

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Gcn: return "gcn";
        case LayerKind::Sage: return "sage";
        case LayerKind::Gat: return "gat";
        case LayerKind::GatV2: return "gatv2";
        case LayerKind::Gen: return "gen";
        case LayerKind::Transformer: return "transformer";
    }
    throw ValidationError("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
    std::string key(name.size(), '\0');
    std::transform(name.begin(), name.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    // Accept the library-style spellings too: GENConv, SAGEConv, ...
    if (key.size() > 4 && key.compare(key.size() - 4, 4, "conv") == 0) {
        key.erase(key.size() - 4);
    }
    if (key == "gcn") return LayerKind::Gcn;
    if (key == "sage") return LayerKind::Sage;
    if (key == "gat") return LayerKind::Gat;
    if (key == "gatv2") return LayerKind::GatV2;
    if (key == "gen") return LayerKind::Gen;
    if (key == "transformer") return LayerKind::Transformer;
    throw ConfigError("unknown layer type \"" + name +
                      "\"; expected gcn, sage, gat, gatv2, gen, or transformer");
}

bool layer_uses_edge_features(LayerKind kind) {
    return kind == LayerKind::Gen || kind == LayerKind::Transformer;
}

namespace {

Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-s, s);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = dist(rng);
    return Tensor({rows, cols}, std::move(v), true);
}

Tensor zeros_vec(std::size_t n) { return Tensor::zeros({n}, true); }

}  // namespace

LayerParams make_layer(LayerKind kind, std::size_t in_dim, std::size_t out_dim,
                       std::size_t edge_dim, std::mt19937_64& rng) {
    if (in_dim == 0 || out_dim == 0) {
        throw ConfigError("layer dimensions must be positive");
    }
    if (edge_dim > 0 && !layer_uses_edge_features(kind)) {
        throw ConfigError(layer_kind_name(kind) + " does not accept edge features");
    }
    LayerParams p;
    p.kind = kind;
    p.in_dim = in_dim;
    p.out_dim = out_dim;
    p.edge_dim = edge_dim;
    switch (kind) {
        case LayerKind::Gcn:
            p.weights["W"] = glorot(in_dim, out_dim, rng);
            break;
        case LayerKind::Sage:
            p.weights["W"] = glorot(2 * in_dim, out_dim, rng);
            break;
        case LayerKind::Gat:
            p.weights["W"] = glorot(in_dim, out_dim, rng);
            p.weights["a"] = glorot(2 * out_dim, 1, rng);
            break;
        case LayerKind::GatV2:
            p.weights["W"] = glorot(in_dim, out_dim, rng);
            p.weights["Wa"] = glorot(2 * in_dim, out_dim, rng);
            p.weights["a"] = glorot(out_dim, 1, rng);
            break;
        case LayerKind::Gen:
            if (out_dim != in_dim) {
                throw ConfigError("gen layer requires out_dim == in_dim, got " +
                                  std::to_string(in_dim) + " -> " + std::to_string(out_dim));
            }
            p.weights["W1"] = glorot(in_dim, in_dim, rng);
            p.weights["b1"] = zeros_vec(in_dim);
            p.weights["W2"] = glorot(in_dim, out_dim, rng);
            p.weights["b2"] = zeros_vec(out_dim);
            if (edge_dim > 0) {
                p.weights["We"] = glorot(edge_dim, in_dim, rng);
                p.weights["be"] = zeros_vec(in_dim);
            }
            break;
        case LayerKind::Transformer:
            p.weights["Wq"] = glorot(in_dim, out_dim, rng);
            p.weights["Wk"] = glorot(in_dim, out_dim, rng);
            p.weights["Wv"] = glorot(in_dim, out_dim, rng);
            if (edge_dim > 0) {
                p.weights["We"] = glorot(edge_dim, out_dim, rng);
            }
            break;
    }
    return p;
}

namespace {

const Tensor& weight(const LayerParams& p, const char* name) {
    const auto it = p.weights.find(name);
    if (it == p.weights.end()) {
        throw ValidationError(layer_kind_name(p.kind) + " layer is missing weight \"" +
                              std::string(name) + "\"");
    }
    return it->second;
}

// Edge list plus one self-loop per node, used by the attention layers.  The
// mask is padded with ones so self-attention is never attenuated.
struct SelfLoopEdges {
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;
    Tensor mask;  // [E+N, 1]; empty when no mask given
};

SelfLoopEdges with_self_loops(const WdnGraph& g, const Tensor& edge_mask) {
    SelfLoopEdges ext;
    ext.src = g.edge_src;
    ext.dst = g.edge_dst;
    for (std::size_t v = 0; v < g.num_nodes; ++v) {
        ext.src.push_back(v);
        ext.dst.push_back(v);
    }
    if (edge_mask.size() > 0) {
        ext.mask = concat_rows({reshape(edge_mask, {g.num_edges(), 1}),
                                Tensor::full({g.num_nodes, 1}, 1.0)});
    }
    return ext;
}

Tensor apply_row_mask(const Tensor& rows_tensor, const Tensor& mask) {
    if (mask.size() == 0) return rows_tensor;
    return scale_rows(rows_tensor, mask);
}

Tensor gcn_forward(const LayerParams& p, const WdnGraph& g, const Tensor& x,
                   const Tensor& edge_mask) {
    // Symmetric normalization with self connections: coefficient
    // 1/sqrt((1+deg_j)(1+deg_i)) per edge and 1/(1+deg_i) for the node itself.
    std::vector<double> coef(g.num_edges());
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        coef[e] = 1.0 / std::sqrt(static_cast<double>((1 + g.degree[g.edge_src[e]]) *
                                                      (1 + g.degree[g.edge_dst[e]])));
    }
    std::vector<double> self_coef(g.num_nodes);
    for (std::size_t v = 0; v < g.num_nodes; ++v) {
        self_coef[v] = 1.0 / static_cast<double>(1 + g.degree[v]);
    }

    Tensor msg = scale_rows(gather_rows(x, g.edge_src), Tensor({g.num_edges()}, coef));
    msg = apply_row_mask(msg, edge_mask);
    Tensor agg = segment_reduce(msg, g.edge_dst, g.num_nodes, Reduce::Sum);
    Tensor self = scale_rows(x, Tensor({g.num_nodes}, self_coef));
    return matmul(add(agg, self), weight(p, "W"));
}

Tensor sage_forward(const LayerParams& p, const WdnGraph& g, const Tensor& x,
                    const Tensor& edge_mask) {
    Tensor msg = apply_row_mask(gather_rows(x, g.edge_src), edge_mask);
    Tensor neigh = segment_reduce(msg, g.edge_dst, g.num_nodes, Reduce::Mean);
    return matmul(concat_cols(x, neigh), weight(p, "W"));
}

// Values must already be aligned per extended edge (one row per slot).
Tensor attention_combine(const WdnGraph& g, const SelfLoopEdges& ext,
                         const Tensor& logits, const Tensor& edge_values) {
    Tensor alpha = segment_softmax(logits, ext.dst, g.num_nodes);
    if (ext.mask.size() > 0) alpha = mul(alpha, ext.mask);
    Tensor weighted = scale_rows(edge_values, reshape(alpha, {ext.src.size()}));
    return segment_reduce(weighted, ext.dst, g.num_nodes, Reduce::Sum);
}

Tensor gat_forward(const LayerParams& p, const WdnGraph& g, const Tensor& x,
                   const Tensor& edge_mask) {
    const SelfLoopEdges ext = with_self_loops(g, edge_mask);
    Tensor wh = matmul(x, weight(p, "W"));
    // Logit per edge j -> i: LeakyReLU(a^T [Wh_i || Wh_j]).
    Tensor pair = concat_cols(gather_rows(wh, ext.dst), gather_rows(wh, ext.src));
    Tensor logits = leaky_relu(matmul(pair, weight(p, "a")), p.attention_slope);
    return attention_combine(g, ext, logits, gather_rows(wh, ext.src));
}

Tensor gatv2_forward(const LayerParams& p, const WdnGraph& g, const Tensor& x,
                     const Tensor& edge_mask) {
    const SelfLoopEdges ext = with_self_loops(g, edge_mask);
    // Dynamic attention: the nonlinearity sits between both projections,
    // a^T LeakyReLU(Wa [h_i || h_j]).
    Tensor pair = concat_cols(gather_rows(x, ext.dst), gather_rows(x, ext.src));
    Tensor hidden = leaky_relu(matmul(pair, weight(p, "Wa")), p.attention_slope);
    Tensor logits = matmul(hidden, weight(p, "a"));
    Tensor wh = matmul(x, weight(p, "W"));
    return attention_combine(g, ext, logits, gather_rows(wh, ext.src));
}

Tensor gen_forward(const LayerParams& p, const WdnGraph& g, const Tensor& x,
                   const Tensor& edge_feats, const Tensor& edge_mask) {
    Tensor msg = gather_rows(x, g.edge_src);
    if (p.edge_dim > 0) {
        Tensor eproj = add(matmul(edge_feats, weight(p, "We")), weight(p, "be"));
        msg = add(msg, eproj);
    }
    msg = add(relu(msg), Tensor::scalar(p.gen_epsilon));
    msg = apply_row_mask(msg, edge_mask);
    // Per-channel softmax aggregation at unit temperature.
    Tensor alpha = segment_softmax(msg, g.edge_dst, g.num_nodes);
    Tensor agg = segment_reduce(mul(alpha, msg), g.edge_dst, g.num_nodes, Reduce::Sum);
    Tensor h = add(x, agg);
    h = relu(add(matmul(h, weight(p, "W1")), weight(p, "b1")));
    return add(matmul(h, weight(p, "W2")), weight(p, "b2"));
}

Tensor transformer_forward(const LayerParams& p, const WdnGraph& g, const Tensor& x,
                           const Tensor& edge_feats, const Tensor& edge_mask) {
    const SelfLoopEdges ext = with_self_loops(g, edge_mask);
    Tensor q = matmul(x, weight(p, "Wq"));
    Tensor k = gather_rows(matmul(x, weight(p, "Wk")), ext.src);
    Tensor v = gather_rows(matmul(x, weight(p, "Wv")), ext.src);
    if (p.edge_dim > 0) {
        // Self-loops carry zero edge features.
        Tensor ef = concat_rows({edge_feats, Tensor::zeros({g.num_nodes, p.edge_dim})});
        Tensor eproj = matmul(ef, weight(p, "We"));
        k = add(k, eproj);
        v = add(v, eproj);
    }
    // Scaled dot product between each target's query and its incoming keys.
    Tensor qd = gather_rows(q, ext.dst);
    Tensor dots = matmul(mul(qd, k), Tensor::full({p.out_dim, 1}, 1.0));
    Tensor logits = scale(dots, 1.0 / std::sqrt(static_cast<double>(p.out_dim)));
    return attention_combine(g, ext, logits, v);
}

}  // namespace

Tensor layer_forward(const LayerParams& p, const WdnGraph& g, const Tensor& x,
                     const Tensor& edge_feats, const Tensor& edge_mask) {
    if (x.ndim() != 2 || x.rows() != g.num_nodes || x.cols() != p.in_dim) {
        throw ShapeError("layer_forward: node features " + detail::shape_str(x.shape()) +
                         " do not match " + std::to_string(g.num_nodes) + " nodes x " +
                         std::to_string(p.in_dim) + " channels");
    }
    if (p.edge_dim > 0) {
        if (edge_feats.ndim() != 2 || edge_feats.rows() != g.num_edges() ||
            edge_feats.cols() != p.edge_dim) {
            throw ShapeError("layer_forward: edge features " +
                             detail::shape_str(edge_feats.shape()) + " do not match " +
                             std::to_string(g.num_edges()) + " edges x " +
                             std::to_string(p.edge_dim) + " channels");
        }
    } else if (edge_feats.size() > 0) {
        throw ValidationError("layer_forward: " + layer_kind_name(p.kind) +
                              " layer was given edge features but has edge_dim 0");
    }
    if (edge_mask.size() > 0 && edge_mask.size() != g.num_edges()) {
        throw ShapeError("layer_forward: edge mask has " + std::to_string(edge_mask.size()) +
                         " entries for " + std::to_string(g.num_edges()) + " edges");
    }

    switch (p.kind) {
        case LayerKind::Gcn: return gcn_forward(p, g, x, edge_mask);
        case LayerKind::Sage: return sage_forward(p, g, x, edge_mask);
        case LayerKind::Gat: return gat_forward(p, g, x, edge_mask);
        case LayerKind::GatV2: return gatv2_forward(p, g, x, edge_mask);
        case LayerKind::Gen: return gen_forward(p, g, x, edge_feats, edge_mask);
        case LayerKind::Transformer:
            return transformer_forward(p, g, x, edge_feats, edge_mask);
    }
    throw ValidationError("unknown layer kind");
}

}  // namespace leakgnn
