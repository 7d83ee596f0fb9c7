#pragma once

// Shared random generators for property-style tests.

#include <random>
#include <set>
#include <utility>
#include <vector>

#include "leakgnn/graph.hpp"
#include "leakgnn/layers.hpp"
#include "leakgnn/tensor.hpp"
#include "oracles.hpp"

namespace fixtures {

// Connected graph on 1..max_nodes nodes: a random spanning tree plus a few
// extra non-duplicate pipes.
inline leakgnn::WdnGraph random_graph(std::mt19937_64& rng, std::size_t max_nodes = 8) {
    const std::size_t n = 1 + rng() % max_nodes;
    std::vector<std::pair<std::size_t, std::size_t>> pipes;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t v = 1; v < n; ++v) {
        const std::size_t u = rng() % v;
        pipes.emplace_back(u, v);
        seen.insert({u, v});
    }
    if (n >= 3) {
        const std::size_t extra = rng() % n;
        for (std::size_t t = 0; t < extra; ++t) {
            const std::size_t u = rng() % n;
            const std::size_t v = rng() % n;
            const auto key = std::minmax(u, v);
            if (u != v && seen.insert(key).second) pipes.emplace_back(key.first, key.second);
        }
    }
    return leakgnn::from_edge_list(n, pipes);
}

inline leakgnn::Tensor randn(std::mt19937_64& rng, std::vector<std::size_t> shape,
                             bool requires_grad = false, double sd = 1.0) {
    std::normal_distribution<double> dist(0.0, sd);
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return leakgnn::Tensor(std::move(shape), std::move(v), requires_grad);
}

// Tensor -> nested vector, the oracle input format.
inline std::vector<std::vector<double>> to_mat(const leakgnn::Tensor& t) {
    std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
    }
    return out;
}

inline std::vector<double> to_vec(const leakgnn::Tensor& t) { return t.values(); }

inline double max_abs_diff(const leakgnn::Tensor& t,
                           const std::vector<std::vector<double>>& m) {
    double worst = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            worst = std::max(worst, std::abs(t.at(i, j) - m[i][j]));
        }
    }
    return worst;
}

// A uniformly random permutation of 0..n-1.
inline std::vector<std::size_t> random_perm(std::mt19937_64& rng, std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

// Runs a layer against its oracle twin; returns the max elementwise gap.
inline double layer_vs_oracle(const leakgnn::LayerParams& p, const leakgnn::WdnGraph& g,
                              const leakgnn::Tensor& x, const leakgnn::Tensor& ef) {
    using leakgnn::LayerKind;
    const auto xm = to_mat(x);
    const auto w = [&](const char* name) { return to_mat(p.weights.at(name)); };
    const auto wv = [&](const char* name) { return to_vec(p.weights.at(name)); };
    leakgnn::Tensor got = leakgnn::layer_forward(p, g, x, ef);
    std::vector<std::vector<double>> want;
    switch (p.kind) {
        case LayerKind::Gcn:
            want = oracle::gcn(g, xm, w("W"));
            break;
        case LayerKind::Sage:
            want = oracle::sage(g, xm, w("W"));
            break;
        case LayerKind::Gat:
            want = oracle::gat(g, xm, w("W"), w("a"), p.attention_slope);
            break;
        case LayerKind::GatV2:
            want = oracle::gatv2(g, xm, w("W"), w("Wa"), w("a"), p.attention_slope);
            break;
        case LayerKind::Gen:
            want = oracle::gen(g, xm, w("W1"), wv("b1"), w("W2"), wv("b2"),
                               p.edge_dim ? w("We") : oracle::Mat{},
                               p.edge_dim ? wv("be") : std::vector<double>{},
                               p.edge_dim ? to_mat(ef) : oracle::Mat{}, p.gen_epsilon);
            break;
        case LayerKind::Transformer:
            want = oracle::transformer(g, xm, w("Wq"), w("Wk"), w("Wv"),
                                       p.edge_dim ? w("We") : oracle::Mat{},
                                       p.edge_dim ? to_mat(ef) : oracle::Mat{});
            break;
    }
    return max_abs_diff(got, want);
}

inline const std::vector<leakgnn::LayerKind>& all_kinds() {
    static const std::vector<leakgnn::LayerKind> kinds{
        leakgnn::LayerKind::Gcn,  leakgnn::LayerKind::Sage,
        leakgnn::LayerKind::Gat,  leakgnn::LayerKind::GatV2,
        leakgnn::LayerKind::Gen,  leakgnn::LayerKind::Transformer};
    return kinds;
}

}  // namespace fixtures
