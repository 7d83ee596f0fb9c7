#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "leakgnn/tensor.hpp"

namespace leakgnn {

// Undirected water network stored as directed edges in both orientations.
// Pipe p occupies directed slots 2p (u -> v) and 2p + 1 (v -> u), so an
// undirected quantity maps onto directed edges without extra bookkeeping.
struct WdnGraph {
    std::size_t num_nodes = 0;
    std::vector<std::string> node_ids;   // external label per node index
    std::vector<std::size_t> edge_src;   // directed source per edge slot
    std::vector<std::size_t> edge_dst;   // directed target per edge slot
    std::vector<std::string> pipe_ids;   // external label per undirected pipe
    std::vector<std::size_t> degree;     // undirected degree per node

    std::size_t num_pipes() const { return pipe_ids.size(); }
    std::size_t num_edges() const { return edge_src.size(); }
};

// Builds a graph from undirected pipes over nodes 0..num_nodes-1.  Node
// labels default to "1".."n" and pipe labels to "P1".."Pk".  Rejects
// self-loops, endpoints out of range, and repeated node pairs.
WdnGraph from_edge_list(std::size_t num_nodes,
                        const std::vector<std::pair<std::size_t, std::size_t>>& pipes);

// Reads a topology CSV with header "src,dst,pipe_id"; node order follows
// first appearance.  Malformed rows raise FormatError with the line number;
// structural problems (self-loops, duplicate pipe ids, duplicate pairs)
// raise ValidationError.
WdnGraph load_topology(const std::string& path);

// Writes the CSV form read back by load_topology.
void save_topology(const WdnGraph& g, const std::string& path);

// BFS hop counts from source; unreachable nodes get SIZE_MAX.
std::vector<std::size_t> hop_distances(const WdnGraph& g, std::size_t source);

bool is_connected(const WdnGraph& g);

// Disjoint union of graphs for minibatching.
struct GraphBatch {
    WdnGraph merged;
    std::vector<std::size_t> graph_of_node;  // merged node -> input graph index
    std::vector<std::size_t> node_offset;    // first merged node per input graph
    std::vector<std::size_t> edge_offset;    // first merged edge slot per input graph
    std::size_t num_graphs = 0;
};

GraphBatch make_batch(const std::vector<WdnGraph>& graphs);
GraphBatch replicate_batch(const WdnGraph& g, std::size_t copies);

// Rows of per-graph node matrices stacked in batch order; all parts must
// share the feature width.
Tensor stack_features(const std::vector<Tensor>& per_graph);

// Relabels nodes: perm[i] is the new index of old node i.  Pipe order and
// labels are untouched; endpoints and node labels move.
WdnGraph permute_graph(const WdnGraph& g, const std::vector<std::size_t>& perm);

// Moves row i of x to row perm[i]; the node-feature counterpart of
// permute_graph.
Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm);

// The 32-node, 34-pipe Hanoi benchmark network.
const WdnGraph& hanoi();

}  // namespace leakgnn
