#include "leakgnn/graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "leakgnn/errors.hpp"

namespace leakgnn {

namespace {

void add_pipe(WdnGraph& g, std::size_t u, std::size_t v, std::string pipe_id) {
    g.edge_src.push_back(u);
    g.edge_dst.push_back(v);
    g.edge_src.push_back(v);
    g.edge_dst.push_back(u);
    g.pipe_ids.push_back(std::move(pipe_id));
    g.degree[u] += 1;
    g.degree[v] += 1;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

WdnGraph from_edge_list(std::size_t num_nodes,
                        const std::vector<std::pair<std::size_t, std::size_t>>& pipes) {
    WdnGraph g;
    g.num_nodes = num_nodes;
    g.degree.assign(num_nodes, 0);
    g.node_ids.reserve(num_nodes);
    for (std::size_t i = 0; i < num_nodes; ++i) {
        g.node_ids.push_back(std::to_string(i + 1));
    }
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t p = 0; p < pipes.size(); ++p) {
        const auto [u, v] = pipes[p];
        if (u >= num_nodes || v >= num_nodes) {
            throw ValidationError("pipe " + std::to_string(p + 1) + " references node " +
                                  std::to_string(std::max(u, v)) + " outside 0.." +
                                  std::to_string(num_nodes ? num_nodes - 1 : 0));
        }
        if (u == v) {
            throw ValidationError("pipe " + std::to_string(p + 1) + " is a self-loop at node " +
                                  std::to_string(u));
        }
        if (!seen.insert({std::min(u, v), std::max(u, v)}).second) {
            throw ValidationError("pipe " + std::to_string(p + 1) + " duplicates pair (" +
                                  std::to_string(u) + "," + std::to_string(v) + ")");
        }
        add_pipe(g, u, v, "P" + std::to_string(p + 1));
    }
    return g;
}

WdnGraph load_topology(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open topology file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty topology file");
    {
        std::string header = trim(line);
        header.erase(std::remove(header.begin(), header.end(), ' '), header.end());
        if (header != "src,dst,pipe_id") {
            throw FormatError(path + ":1: expected header \"src,dst,pipe_id\", got \"" +
                              trim(line) + "\"");
        }
    }

    WdnGraph g;
    std::map<std::string, std::size_t> node_index;
    std::set<std::string> pipe_seen;
    std::set<std::pair<std::size_t, std::size_t>> pair_seen;
    std::size_t line_no = 1;

    const auto intern = [&](const std::string& label) {
        auto it = node_index.find(label);
        if (it != node_index.end()) return it->second;
        const std::size_t idx = g.node_ids.size();
        node_index.emplace(label, idx);
        g.node_ids.push_back(label);
        g.degree.push_back(0);
        return idx;
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(trim(field));
        if (fields.size() != 3) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": expected 3 fields, got " +
                              std::to_string(fields.size()));
        }
        if (fields[0].empty() || fields[1].empty() || fields[2].empty()) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": empty field");
        }
        const std::size_t u = intern(fields[0]);
        const std::size_t v = intern(fields[1]);
        if (u == v) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": self-loop at node \"" +
                                  fields[0] + "\"");
        }
        if (!pipe_seen.insert(fields[2]).second) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate pipe id \"" +
                                  fields[2] + "\"");
        }
        if (!pair_seen.insert({std::min(u, v), std::max(u, v)}).second) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate pipe between \"" +
                                  fields[0] + "\" and \"" + fields[1] + "\"");
        }
        add_pipe(g, u, v, fields[2]);
    }
    g.num_nodes = g.node_ids.size();
    if (g.num_nodes == 0) throw FormatError(path + ": no pipes in topology file");
    return g;
}

void save_topology(const WdnGraph& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write topology file: " + path);
    out << "src,dst,pipe_id\n";
    for (std::size_t p = 0; p < g.num_pipes(); ++p) {
        out << g.node_ids[g.edge_src[2 * p]] << "," << g.node_ids[g.edge_dst[2 * p]]
            << "," << g.pipe_ids[p] << "\n";
    }
}

std::vector<std::size_t> hop_distances(const WdnGraph& g, std::size_t source) {
    if (source >= g.num_nodes) {
        throw IndexError("hop_distances source " + std::to_string(source) +
                         " out of range for " + std::to_string(g.num_nodes) + " nodes");
    }
    constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> dist(g.num_nodes, kUnreached);
    std::vector<std::vector<std::size_t>> adj(g.num_nodes);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        adj[g.edge_src[e]].push_back(g.edge_dst[e]);
    }
    std::deque<std::size_t> queue{source};
    dist[source] = 0;
    while (!queue.empty()) {
        const std::size_t u = queue.front();
        queue.pop_front();
        for (std::size_t v : adj[u]) {
            if (dist[v] == kUnreached) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    return dist;
}

bool is_connected(const WdnGraph& g) {
    if (g.num_nodes == 0) return false;
    const auto dist = hop_distances(g, 0);
    return std::none_of(dist.begin(), dist.end(), [](std::size_t d) {
        return d == std::numeric_limits<std::size_t>::max();
    });
}

GraphBatch make_batch(const std::vector<WdnGraph>& graphs) {
    if (graphs.empty()) throw ValidationError("make_batch requires at least one graph");
    GraphBatch b;
    b.num_graphs = graphs.size();
    std::size_t node_off = 0, edge_off = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const WdnGraph& g = graphs[gi];
        b.node_offset.push_back(node_off);
        b.edge_offset.push_back(edge_off);
        for (std::size_t v = 0; v < g.num_nodes; ++v) {
            b.merged.node_ids.push_back(g.node_ids[v]);
            b.merged.degree.push_back(g.degree[v]);
            b.graph_of_node.push_back(gi);
        }
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            b.merged.edge_src.push_back(g.edge_src[e] + node_off);
            b.merged.edge_dst.push_back(g.edge_dst[e] + node_off);
        }
        for (const auto& pid : g.pipe_ids) b.merged.pipe_ids.push_back(pid);
        node_off += g.num_nodes;
        edge_off += g.num_edges();
    }
    b.merged.num_nodes = node_off;
    return b;
}

GraphBatch replicate_batch(const WdnGraph& g, std::size_t copies) {
    if (copies == 0) throw ValidationError("replicate_batch requires at least one copy");
    return make_batch(std::vector<WdnGraph>(copies, g));
}

Tensor stack_features(const std::vector<Tensor>& per_graph) {
    return concat_rows(per_graph);
}

WdnGraph permute_graph(const WdnGraph& g, const std::vector<std::size_t>& perm) {
    if (perm.size() != g.num_nodes) {
        throw ValidationError("permutation has " + std::to_string(perm.size()) +
                              " entries for " + std::to_string(g.num_nodes) + " nodes");
    }
    std::vector<bool> hit(g.num_nodes, false);
    for (std::size_t p : perm) {
        if (p >= g.num_nodes || hit[p]) {
            throw ValidationError("permutation is not a bijection on 0.." +
                                  std::to_string(g.num_nodes ? g.num_nodes - 1 : 0));
        }
        hit[p] = true;
    }
    WdnGraph out;
    out.num_nodes = g.num_nodes;
    out.node_ids.resize(g.num_nodes);
    out.degree.resize(g.num_nodes);
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        out.node_ids[perm[i]] = g.node_ids[i];
        out.degree[perm[i]] = g.degree[i];
    }
    out.edge_src.reserve(g.num_edges());
    out.edge_dst.reserve(g.num_edges());
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        out.edge_src.push_back(perm[g.edge_src[e]]);
        out.edge_dst.push_back(perm[g.edge_dst[e]]);
    }
    out.pipe_ids = g.pipe_ids;
    return out;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
    if (x.ndim() != 2 || x.rows() != perm.size()) {
        throw ShapeError("permute_rows: tensor " + detail::shape_str(x.shape()) +
                         " does not match permutation of " + std::to_string(perm.size()));
    }
    // gather with the inverse permutation: output row j comes from old row i
    // where perm[i] == j.
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    return gather_rows(x, inverse);
}

}  // namespace leakgnn
