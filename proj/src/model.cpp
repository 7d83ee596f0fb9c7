#include "leakgnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

#include "leakgnn/errors.hpp"

using nlohmann::json;

namespace leakgnn {

std::string task_name(Task t) {
    return t == Task::GraphDetection ? "graph" : "node";
}

Task task_from_name(const std::string& name) {
    if (name == "graph") return Task::GraphDetection;
    if (name == "node") return Task::NodeLocalization;
    throw ConfigError("unknown task \"" + name + "\"; expected graph or node");
}

void validate_config(const ModelConfig& cfg) {
    if (cfg.depth != 2 && cfg.depth != 4 && cfg.depth != 8) {
        throw ConfigError("depth must be 2, 4, or 8, got " + std::to_string(cfg.depth));
    }
    if (cfg.hidden != 16 && cfg.hidden != 32 && cfg.hidden != 64) {
        throw ConfigError("hidden must be 16, 32, or 64, got " + std::to_string(cfg.hidden));
    }
    if (cfg.in_dim == 0) throw ConfigError("in_dim must be positive");
    if (cfg.edge_dim > 0 && !layer_uses_edge_features(cfg.layer)) {
        throw ConfigError(layer_kind_name(cfg.layer) + " layers do not accept edge features");
    }
}

namespace {

Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-s, s);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = dist(rng);
    return Tensor({rows, cols}, std::move(v), true);
}

}  // namespace

LeakModel LeakModel::init(const ModelConfig& cfg) {
    validate_config(cfg);
    LeakModel m;
    m.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    m.in_w = glorot(cfg.in_dim, cfg.hidden, rng);
    m.in_b = Tensor::zeros({cfg.hidden}, true);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        m.layers.push_back(make_layer(cfg.layer, cfg.hidden, cfg.hidden, cfg.edge_dim, rng));
        m.norm_gain.push_back(Tensor::full({cfg.hidden}, 1.0, true));
        m.norm_bias.push_back(Tensor::zeros({cfg.hidden}, true));
    }
    m.head_w = glorot(cfg.hidden, 1, rng);
    m.head_b = Tensor::zeros({1}, true);
    return m;
}

std::vector<std::pair<std::string, Tensor>> LeakModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("input_proj.W", in_w);
    out.emplace_back("input_proj.b", in_b);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (const auto& [name, w] : layers[i].weights) {
            out.emplace_back("layers." + std::to_string(i) + "." + name, w);
        }
        out.emplace_back("norms." + std::to_string(i) + ".gain", norm_gain[i]);
        out.emplace_back("norms." + std::to_string(i) + ".bias", norm_bias[i]);
    }
    out.emplace_back("head.W", head_w);
    out.emplace_back("head.b", head_b);
    return out;
}

std::size_t LeakModel::num_parameters() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.size();
    return n;
}

Tensor LeakModel::embed(const WdnGraph& g, const Tensor& x, const Tensor& edge_feats,
                        const Tensor& edge_mask) const {
    if (x.ndim() != 2 || x.cols() != config.in_dim) {
        throw ShapeError("model expects " + std::to_string(config.in_dim) +
                         " input features, got " + detail::shape_str(x.shape()));
    }
    Tensor h = add(matmul(x, in_w), in_b);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layer_forward(layers[i], g, h, config.edge_dim > 0 ? edge_feats : Tensor(),
                          edge_mask);
        h = layer_norm(h, norm_gain[i], norm_bias[i]);
        h = leaky_relu(h, 0.01);
    }
    return h;
}

Tensor LeakModel::node_logits(const WdnGraph& g, const Tensor& x,
                              const Tensor& edge_feats, const Tensor& edge_mask) const {
    Tensor h = embed(g, x, edge_feats, edge_mask);
    Tensor z = add(matmul(h, head_w), head_b);
    return reshape(z, {g.num_nodes});
}

Tensor LeakModel::graph_logits(const WdnGraph& g, const Tensor& x,
                               const Tensor& edge_feats,
                               const std::vector<std::size_t>& graph_of_node,
                               std::size_t num_graphs, const Tensor& edge_mask) const {
    if (graph_of_node.size() != g.num_nodes) {
        throw ShapeError("graph assignment covers " + std::to_string(graph_of_node.size()) +
                         " nodes, graph has " + std::to_string(g.num_nodes));
    }
    if (config.task == Task::GraphDetection) {
        Tensor h = embed(g, x, edge_feats, edge_mask);
        Tensor pooled = segment_reduce(h, graph_of_node, num_graphs, Reduce::Mean);
        Tensor z = add(matmul(pooled, head_w), head_b);
        return reshape(z, {num_graphs});
    }
    // Localization: a graph leaks when its most suspicious node does.
    Tensor z = node_logits(g, x, edge_feats, edge_mask);
    Tensor per_node = reshape(z, {g.num_nodes, 1});
    Tensor pooled = segment_reduce(per_node, graph_of_node, num_graphs, Reduce::Max);
    return reshape(pooled, {num_graphs});
}

namespace {

constexpr char kMagic[8] = {'L', 'E', 'A', 'K', 'G', 'N', 'N', '1'};

json config_to_json(const ModelConfig& cfg) {
    return {{"layer", layer_kind_name(cfg.layer)}, {"depth", cfg.depth},
            {"hidden", cfg.hidden},               {"in_dim", cfg.in_dim},
            {"edge_dim", cfg.edge_dim},           {"task", task_name(cfg.task)},
            {"fuzzy", cfg.fuzzy},                 {"seed", cfg.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.layer = layer_kind_from_name(j.at("layer").get<std::string>());
    cfg.depth = j.at("depth").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.in_dim = j.at("in_dim").get<std::size_t>();
    cfg.edge_dim = j.at("edge_dim").get<std::size_t>();
    cfg.task = task_from_name(j.at("task").get<std::string>());
    cfg.fuzzy = j.at("fuzzy").get<bool>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

void write_u64_le(std::ofstream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::ifstream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
    return config_to_json(cfg).dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config is not valid JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg = config_from_json(j);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config JSON is missing fields: ") + e.what());
    }
    validate_config(cfg);
    return cfg;
}

void save_checkpoint(const std::string& path, const LeakModel& model,
                     const std::string& extra_json) {
    json extra;
    try {
        extra = json::parse(extra_json);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    if (!extra.is_object()) throw FormatError("checkpoint metadata must be a JSON object");

    const auto params = model.named_parameters();
    json arrays = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : params) {
        arrays.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size();
    }
    json header;
    header["format_version"] = 1;
    header["config"] = config_to_json(model.config);
    header["metadata"] = extra;
    header["arrays"] = arrays;
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    write_u64_le(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : params) {
        // Assumes IEEE-754 doubles on a little-endian host, as the rest of
        // the build does.
        out.write(reinterpret_cast<const char*>(t.values().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw FormatError("short write while saving checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw FormatError(path + ": not a checkpoint file (bad magic)");
    }
    const std::uint64_t header_len = read_u64_le(in);
    if (!in || header_len > (1u << 30)) {
        throw FormatError(path + ": corrupt checkpoint header length");
    }
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw FormatError(path + ": truncated checkpoint header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw FormatError(path + ": checkpoint header: " + e.what());
    }
    if (header.value("format_version", 0) != 1) {
        throw FormatError(path + ": unsupported checkpoint format version");
    }

    LoadedCheckpoint result;
    try {
        result.model = LeakModel::init(config_from_json(header.at("config")));
        result.extra_json = header.at("metadata").dump();
    } catch (const json::exception& e) {
        throw FormatError(path + ": checkpoint header: " + e.what());
    }

    auto params = result.model.named_parameters();
    const auto& arrays = header.at("arrays");
    if (!arrays.is_array() || arrays.size() != params.size()) {
        throw FormatError(path + ": checkpoint array directory does not match the model");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = arrays[i];
        if (entry.at("name").get<std::string>() != params[i].first) {
            throw FormatError(path + ": array " + std::to_string(i) + " is \"" +
                              entry.at("name").get<std::string>() + "\", expected \"" +
                              params[i].first + "\"");
        }
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != params[i].second.shape()) {
            throw FormatError(path + ": array \"" + params[i].first + "\" has shape " +
                              detail::shape_str(shape) + ", expected " +
                              detail::shape_str(params[i].second.shape()));
        }
        Tensor& t = params[i].second;
        in.read(reinterpret_cast<char*>(t.values().data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw FormatError(path + ": truncated checkpoint payload");
    }
    // Exactly the directory's worth of payload must remain.
    in.peek();
    if (!in.eof()) throw FormatError(path + ": trailing bytes after checkpoint payload");
    return result;
}

}  // namespace leakgnn
