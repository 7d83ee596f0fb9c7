#include "leakgnn/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "leakgnn/errors.hpp"
#include "leakgnn/train.hpp"

using nlohmann::json;

namespace leakgnn {

namespace {

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Directed slot -> owning pipe: slots 2p and 2p+1 belong to pipe p.
std::vector<std::size_t> pipe_of_slot(const WdnGraph& g) {
    std::vector<std::size_t> owner(g.num_edges());
    for (std::size_t e = 0; e < owner.size(); ++e) owner[e] = e / 2;
    return owner;
}

// The target's logit under the given masks; a [1,1] tensor.
Tensor masked_logit(const LeakModel& model, const WdnGraph& g, const Sample& sample,
                    const ExplainTarget& target, const Tensor& masked_x,
                    const Tensor& edge_mask) {
    const Tensor& ef = model.config.edge_dim > 0 ? sample.edge_features : Tensor();
    if (target.graph_level) {
        const std::vector<std::size_t> assign(g.num_nodes, 0);
        Tensor logits = model.graph_logits(g, masked_x, ef, assign, 1, edge_mask);
        return reshape(logits, {1, 1});
    }
    Tensor logits = model.node_logits(g, masked_x, ef, edge_mask);
    return gather_rows(reshape(logits, {g.num_nodes, 1}), {target.node});
}

}  // namespace

ExplanationMask explain(const LeakModel& model, const WdnGraph& g, const Sample& sample,
                        const ExplainTarget& target, const ExplainOptions& opts) {
    if (opts.steps == 0) throw ConfigError("explain: step count must be positive");
    if (!(opts.lr > 0.0)) throw ConfigError("explain: learning rate must be positive");
    if (!target.graph_level && target.node >= g.num_nodes) {
        throw ValidationError("explain: target node " + std::to_string(target.node) +
                              " out of range for " + std::to_string(g.num_nodes) + " nodes");
    }
    const std::size_t num_pipes = g.num_pipes();
    const std::size_t num_feats = model.config.in_dim;
    if (sample.node_features.ndim() != 2 || sample.node_features.cols() != num_feats) {
        throw ShapeError("explain: sample features do not match the model input width");
    }

    // The model's own hard prediction is the preservation target.
    const double base_logit =
        masked_logit(model, g, sample, target, sample.node_features, Tensor()).item();
    const double hard = stable_sigmoid(base_logit) >= 0.5 ? 1.0 : 0.0;
    const Tensor hard_target({1, 1}, {hard});

    // Latent logits start marginally positive: masks open just above one
    // half yet inside the regularizers' shrink basin (below sigmoid of
    // lambda_size / lambda_entropy), so an uninformative prediction lets
    // the size and entropy terms pull every mask toward zero.
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::vector<double> pipe_init(num_pipes), feat_init(num_feats);
    for (double& v : pipe_init) v = 0.002 + 2e-4 * jitter(rng);
    for (double& v : feat_init) v = 0.002 + 2e-4 * jitter(rng);
    Tensor pipe_logits({num_pipes, 1}, std::move(pipe_init), true);
    Tensor feat_logits({num_feats}, std::move(feat_init), true);

    TrainConfig opt_cfg;
    opt_cfg.lr = opts.lr;
    opt_cfg.weight_decay = 0.0;
    opt_cfg.clip_norm = 1e18;  // mask learning runs unclipped
    AdamW opt({{"pipe_mask", pipe_logits}, {"feature_mask", feat_logits}}, opt_cfg);

    const std::vector<std::size_t> slot_owner = pipe_of_slot(g);

    ExplanationMask out;
    out.target = target;

    auto objective = [&]() -> Tensor {
        Tensor pipe_sig = sigmoid(pipe_logits);                   // [P,1]
        Tensor edge_mask = gather_rows(pipe_sig, slot_owner);     // [E,1]
        Tensor feat_sig = sigmoid(feat_logits);                   // [F]
        Tensor masked_x = mul(sample.node_features, feat_sig);
        Tensor logit = masked_logit(model, g, sample, target, masked_x, edge_mask);
        Tensor bce = bce_from_logits(logit, hard_target);
        Tensor all_masks = concat_rows({pipe_sig, reshape(feat_sig, {num_feats, 1})});
        Tensor size_term = scale(mean(all_masks), opts.lambda_size);
        Tensor entropy_term = scale(mean(binary_entropy(all_masks)), opts.lambda_entropy);
        return bce + size_term + entropy_term;
    };

    for (std::size_t step = 0; step < opts.steps; ++step) {
        Tape tape;
        Tensor loss = objective();
        out.objective_trace.push_back(loss.item());
        tape.backward(loss);
        opt.step();
        opt.zero_grad();
    }
    out.final_objective = objective().item();
    out.objective_trace.push_back(out.final_objective);
    out.converged = out.final_objective <= out.objective_trace.front() + 1e-12;

    // Backward passes accumulated gradients into the frozen model's leaves;
    // values stayed untouched, but leave the grads clean for the caller.
    for (auto& [name, t] : model.named_parameters()) t.zero_grad();

    out.pipe_mask.resize(num_pipes);
    for (std::size_t p = 0; p < num_pipes; ++p) {
        out.pipe_mask[p] = stable_sigmoid(pipe_logits.at(p, 0));
    }
    out.edge_mask.resize(g.num_edges());
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        out.edge_mask[e] = out.pipe_mask[slot_owner[e]];
    }
    out.feature_mask.resize(num_feats);
    for (std::size_t f = 0; f < num_feats; ++f) {
        out.feature_mask[f] = stable_sigmoid(feat_logits.at(f));
    }
    return out;
}

Subgraph extract_subgraph(const ExplanationMask& mask, const WdnGraph& g,
                          std::size_t k, double threshold) {
    if (k == 0) throw ConfigError("extract_subgraph: edge budget must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("extract_subgraph: threshold must lie in (0,1)");
    }
    if (mask.pipe_mask.size() != g.num_pipes()) {
        throw ShapeError("extract_subgraph: mask covers " +
                         std::to_string(mask.pipe_mask.size()) + " pipes, graph has " +
                         std::to_string(g.num_pipes()));
    }

    // Endpoints of pipe p, low node first; ties order by these pairs.
    auto endpoints = [&](std::size_t p) {
        const std::size_t u = g.edge_src[2 * p], v = g.edge_dst[2 * p];
        return std::pair<std::size_t, std::size_t>(std::min(u, v), std::max(u, v));
    };

    std::vector<std::size_t> ranked(g.num_pipes());
    std::iota(ranked.begin(), ranked.end(), 0);
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        if (mask.pipe_mask[a] != mask.pipe_mask[b]) {
            return mask.pipe_mask[a] > mask.pipe_mask[b];
        }
        return endpoints(a) < endpoints(b);
    });

    Subgraph sub;
    std::set<std::size_t> nodes;
    for (std::size_t p : ranked) {
        if (sub.pipes.size() >= k) break;
        if (!(mask.pipe_mask[p] > threshold)) break;  // ranked order: rest are lower
        sub.pipes.push_back(p);
        const auto [u, v] = endpoints(p);
        nodes.insert(u);
        nodes.insert(v);
    }
    sub.nodes.assign(nodes.begin(), nodes.end());
    sub.empty = sub.pipes.empty();
    return sub;
}

std::vector<std::size_t> rank_features(const ExplanationMask& mask) {
    std::vector<std::size_t> order(mask.feature_mask.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return mask.feature_mask[a] > mask.feature_mask[b];
    });
    return order;
}

std::string explanation_to_json(const ExplanationMask& mask, const Subgraph& sub,
                                const WdnGraph& g,
                                const std::vector<std::string>& feature_names,
                                int indent) {
    if (feature_names.size() != mask.feature_mask.size()) {
        throw ShapeError("explanation_to_json: " + std::to_string(feature_names.size()) +
                         " names for " + std::to_string(mask.feature_mask.size()) +
                         " feature-mask entries");
    }
    if (mask.pipe_mask.size() != g.num_pipes()) {
        throw ShapeError("explanation_to_json: mask does not match the graph");
    }
    json j;
    if (mask.target.graph_level) {
        j["target"] = {{"kind", "graph"}};
    } else {
        j["target"] = {{"kind", "node"}, {"node", g.node_ids[mask.target.node]}};
    }
    json edges = json::object();
    for (std::size_t p = 0; p < g.num_pipes(); ++p) {
        edges[g.pipe_ids[p]] = mask.pipe_mask[p];
    }
    j["edge_mask"] = std::move(edges);
    json feats = json::object();
    for (std::size_t f = 0; f < feature_names.size(); ++f) {
        feats[feature_names[f]] = mask.feature_mask[f];
    }
    j["feature_mask"] = std::move(feats);
    json pipes = json::array(), nodes = json::array();
    for (std::size_t p : sub.pipes) pipes.push_back(g.pipe_ids[p]);
    for (std::size_t v : sub.nodes) nodes.push_back(g.node_ids[v]);
    j["subgraph"] = {{"pipes", std::move(pipes)},
                     {"nodes", std::move(nodes)},
                     {"empty", sub.empty}};
    j["converged"] = mask.converged;
    j["final_objective"] = mask.final_objective;
    j["objective_trace"] = mask.objective_trace;
    return j.dump(indent);
}

}  // namespace leakgnn
