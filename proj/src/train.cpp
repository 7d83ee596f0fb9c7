#include "leakgnn/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include <json.hpp>

#include "leakgnn/errors.hpp"
#include "leakgnn/layers.hpp"

using nlohmann::json;

namespace leakgnn {

void validate_train_config(const TrainConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
    if (cfg.max_epochs == 0) throw ConfigError("max epochs must be positive");
    if (cfg.patience == 0) throw ConfigError("early-stop patience must be positive");
    if (!(cfg.clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
    if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
    if (!(cfg.scheduler_factor > 0.0 && cfg.scheduler_factor <= 1.0)) {
        throw ConfigError("scheduler factor must lie in (0, 1]");
    }
    if (cfg.scheduler_patience == 0) throw ConfigError("scheduler patience must be positive");
    if (!(cfg.min_lr > 0.0)) throw ConfigError("min learning rate must be positive");
    if (!(cfg.scheduler_threshold >= 0.0)) {
        throw ConfigError("scheduler threshold must be non-negative");
    }
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
        throw ConfigError("betas must lie in [0, 1)");
    }
    if (!(cfg.eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) {
        throw ConfigError("prediction threshold must lie in (0, 1)");
    }
}

double clip_gradients(const std::vector<std::pair<std::string, Tensor>>& params,
                      double max_norm) {
    if (!(max_norm > 0.0)) throw ConfigError("clip norm must be positive");
    double sq = 0.0;
    for (const auto& [name, t] : params) {
        for (double gv : t.grad()) sq += gv * gv;
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return 1.0;
    const double factor = max_norm / norm;
    for (const auto& [name, t] : params) {
        for (double& gv : t.node()->grad) gv *= factor;
    }
    return factor;
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      lr_(cfg.lr),
      weight_decay_(cfg.weight_decay),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.eps),
      clip_norm_(cfg.clip_norm) {
    validate_train_config(cfg);
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        if (!t.requires_grad()) {
            throw ValidationError("optimizer parameter '" + name +
                                  "' does not require gradients");
        }
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

double AdamW::step() {
    for (const auto& [name, t] : params_) {
        for (double gv : t.grad()) {
            if (!std::isfinite(gv)) {
                throw NumericError("non-finite gradient in parameter '" + name + "'");
            }
        }
    }
    const double applied = clip_gradients(params_, clip_norm_);
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& vals = params_[k].second.values();
        const auto& grad = params_[k].second.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < vals.size(); ++i) {
            vals[i] -= lr_ * weight_decay_ * vals[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
            vals[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
    return applied;
}

void AdamW::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

PlateauScheduler::PlateauScheduler(double factor, std::size_t patience, double min_lr,
                                   double threshold)
    : factor_(factor),
      min_lr_(min_lr),
      threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()),
      patience_(patience) {}

double PlateauScheduler::step(double monitored, double current_lr) {
    if (monitored < best_ - threshold_) {
        best_ = monitored;
        bad_ = 0;
        return current_lr;
    }
    if (++bad_ > patience_) {
        bad_ = 0;
        return std::max(current_lr * factor_, min_lr_);
    }
    return current_lr;
}

double f1_score(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size()) {
        throw ShapeError("f1_score: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    }
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool p = preds[i] != 0, l = labels[i] != 0;
        if (p && l) ++tp;
        else if (p) ++fp;
        else if (l) ++fn;
    }
    const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

namespace {

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct Batch {
    GraphBatch gb;
    Tensor x, edge_feats, graph_targets, node_targets, node_weights;
    std::vector<const Sample*> items;
};

Batch assemble_batch(const WdnGraph& g, std::vector<const Sample*> items,
                     bool with_edges, double pos_weight) {
    Batch b;
    b.gb = replicate_batch(g, items.size());
    std::vector<Tensor> xs, efs;
    std::vector<double> gt, nt;
    xs.reserve(items.size());
    gt.reserve(items.size());
    for (const Sample* s : items) {
        xs.push_back(s->node_features);
        if (with_edges) efs.push_back(s->edge_features);
        gt.push_back(s->graph_label);
        nt.insert(nt.end(), s->node_labels.begin(), s->node_labels.end());
    }
    b.x = stack_features(xs);
    if (with_edges) b.edge_feats = stack_features(efs);
    const std::size_t n_graphs = gt.size(), n_nodes = nt.size();
    b.graph_targets = Tensor({n_graphs}, std::move(gt));
    if (pos_weight != 1.0) {
        std::vector<double> w(n_nodes);
        for (std::size_t i = 0; i < n_nodes; ++i) w[i] = nt[i] > 0.5 ? pos_weight : 1.0;
        b.node_weights = Tensor({n_nodes}, std::move(w));
    }
    b.node_targets = Tensor({n_nodes}, std::move(nt));
    b.items = std::move(items);
    return b;
}

Tensor batch_loss(const LeakModel& model, const Batch& b) {
    if (model.config.task == Task::GraphDetection) {
        Tensor logits = model.graph_logits(b.gb.merged, b.x, b.edge_feats,
                                           b.gb.graph_of_node, b.gb.num_graphs);
        return bce_from_logits(logits, b.graph_targets);
    }
    Tensor logits = model.node_logits(b.gb.merged, b.x, b.edge_feats);
    return bce_from_logits(logits, b.node_targets, b.node_weights);
}

}  // namespace

double node_pos_weight(const std::vector<Sample>& train) {
    double pos = 0.0, neg = 0.0;
    for (const Sample& s : train) {
        for (double v : s.node_labels) (v > 0.5 ? pos : neg) += 1.0;
    }
    if (pos == 0.0) return 1.0;
    return std::min(50.0, std::max(1.0, neg / pos));
}

EvalResult evaluate(const LeakModel& model, const WdnGraph& g,
                    const std::vector<Sample>& samples, double threshold,
                    double pos_weight, std::size_t batch_size) {
    if (samples.empty()) throw ConfigError("evaluate: no samples");
    if (batch_size == 0) throw ConfigError("evaluate: batch size must be positive");
    const bool with_edges = model.config.edge_dim > 0;
    const bool node_task = model.config.task == Task::NodeLocalization;

    double loss_acc = 0.0;
    std::size_t loss_n = 0;
    std::vector<int> graph_preds, graph_labels, node_preds, node_labels;
    for (std::size_t lo = 0; lo < samples.size(); lo += batch_size) {
        const std::size_t hi = std::min(samples.size(), lo + batch_size);
        std::vector<const Sample*> items;
        items.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) items.push_back(&samples[i]);
        Batch b = assemble_batch(g, std::move(items), with_edges, pos_weight);

        if (!node_task) {
            Tensor logits = model.graph_logits(b.gb.merged, b.x, b.edge_feats,
                                               b.gb.graph_of_node, b.gb.num_graphs);
            Tensor loss = bce_from_logits(logits, b.graph_targets);
            loss_acc += loss.item() * static_cast<double>(logits.size());
            loss_n += logits.size();
            for (std::size_t i = 0; i < logits.size(); ++i) {
                graph_preds.push_back(stable_sigmoid(logits.at(i)) >= threshold ? 1 : 0);
                graph_labels.push_back(b.graph_targets.at(i) > 0.5 ? 1 : 0);
            }
        } else {
            Tensor logits = model.node_logits(b.gb.merged, b.x, b.edge_feats);
            Tensor loss = bce_from_logits(logits, b.node_targets, b.node_weights);
            loss_acc += loss.item() * static_cast<double>(logits.size());
            loss_n += logits.size();
            std::vector<double> graph_max(b.gb.num_graphs,
                                          -std::numeric_limits<double>::infinity());
            for (std::size_t i = 0; i < logits.size(); ++i) {
                node_preds.push_back(stable_sigmoid(logits.at(i)) >= threshold ? 1 : 0);
                node_labels.push_back(b.node_targets.at(i) > 0.5 ? 1 : 0);
                const std::size_t owner = b.gb.graph_of_node[i];
                graph_max[owner] = std::max(graph_max[owner], logits.at(i));
            }
            for (std::size_t j = 0; j < b.gb.num_graphs; ++j) {
                graph_preds.push_back(stable_sigmoid(graph_max[j]) >= threshold ? 1 : 0);
                graph_labels.push_back(b.items[j]->graph_label > 0.5 ? 1 : 0);
            }
        }
    }

    EvalResult r;
    r.loss = loss_acc / static_cast<double>(loss_n);
    r.graph_f1 = f1_score(graph_preds, graph_labels);
    if (node_task) r.node_f1 = f1_score(node_preds, node_labels);
    return r;
}

std::string config_to_json(const ModelConfig& mc, const TrainConfig& tc) {
    json j;
    j["model"] = json::parse(model_config_to_json(mc));
    j["train"] = {{"lr", tc.lr},
                  {"batch_size", tc.batch_size},
                  {"max_epochs", tc.max_epochs},
                  {"patience", tc.patience},
                  {"clip_norm", tc.clip_norm},
                  {"weight_decay", tc.weight_decay},
                  {"scheduler_factor", tc.scheduler_factor},
                  {"scheduler_patience", tc.scheduler_patience},
                  {"min_lr", tc.min_lr},
                  {"scheduler_threshold", tc.scheduler_threshold},
                  {"beta1", tc.beta1},
                  {"beta2", tc.beta2},
                  {"eps", tc.eps},
                  {"threshold", tc.threshold},
                  {"auto_pos_weight", tc.auto_pos_weight},
                  {"seed", tc.seed}};
    return j.dump();
}

std::string MetricsReport::to_json(int indent) const {
    json j;
    j["graph_f1"] = graph_f1;
    j["node_f1"] = node_f1 ? json(*node_f1) : json(nullptr);
    j["test_loss"] = test_loss;
    j["val_graph_f1"] = val_graph_f1;
    j["val_node_f1"] = val_node_f1 ? json(*val_node_f1) : json(nullptr);
    j["runtime_seconds"] = runtime_seconds;
    j["best_epoch"] = best_epoch;
    j["epochs_run"] = epochs_run;
    j["early_stopped"] = early_stopped;
    try {
        j["config"] = json::parse(config_json);
    } catch (const json::exception&) {
        j["config"] = config_json;
    }
    json hist = json::array();
    for (const EpochRecord& e : history) {
        hist.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_loss", e.val_loss},
                        {"lr", e.lr}});
    }
    j["history"] = std::move(hist);
    return j.dump(indent);
}

MetricsReport train(LeakModel& model, const WdnGraph& g, const DataSplit& data,
                    const TrainConfig& cfg) {
    validate_train_config(cfg);
    validate_config(model.config);
    if (data.train.empty() || data.val.empty() || data.test.empty()) {
        throw ConfigError("train: train/val/test splits must all be non-empty");
    }
    const auto t0 = std::chrono::steady_clock::now();

    const bool node_task = model.config.task == Task::NodeLocalization;
    const double pos_weight =
        node_task && cfg.auto_pos_weight ? node_pos_weight(data.train) : 1.0;
    const bool with_edges = model.config.edge_dim > 0;
    const std::size_t batch = std::min(cfg.batch_size, data.train.size());

    auto params = model.named_parameters();
    AdamW opt(params, cfg);
    PlateauScheduler sched(cfg.scheduler_factor, cfg.scheduler_patience, cfg.min_lr,
                           cfg.scheduler_threshold);

    MetricsReport report;
    report.config_json = config_to_json(model.config, cfg);

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_values;
    best_values.reserve(params.size());
    for (const auto& [name, t] : params) best_values.push_back(t.values());
    std::size_t bad = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double epoch_lr = opt.lr();
        double acc = 0.0;
        for (std::size_t lo = 0; lo < order.size(); lo += batch) {
            const std::size_t hi = std::min(order.size(), lo + batch);
            std::vector<const Sample*> items;
            items.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) items.push_back(&data.train[order[i]]);
            Batch b = assemble_batch(g, std::move(items), with_edges, pos_weight);
            Tape tape;
            Tensor loss = batch_loss(model, b);
            tape.backward(loss);
            opt.step();
            opt.zero_grad();
            acc += loss.item() * static_cast<double>(hi - lo);
        }
        const double train_loss = acc / static_cast<double>(order.size());
        const EvalResult val =
            evaluate(model, g, data.val, cfg.threshold, pos_weight, cfg.batch_size);
        report.history.push_back({epoch, train_loss, val.loss, epoch_lr});
        report.epochs_run = epoch;

        if (val.loss < best_val) {
            best_val = val.loss;
            for (std::size_t k = 0; k < params.size(); ++k) {
                best_values[k] = params[k].second.values();
            }
            report.best_epoch = epoch;
            bad = 0;
        } else if (++bad >= cfg.patience) {
            report.early_stopped = true;
            break;
        }
        opt.set_lr(sched.step(val.loss, opt.lr()));
    }

    for (std::size_t k = 0; k < params.size(); ++k) {
        params[k].second.values() = best_values[k];
    }

    const EvalResult val =
        evaluate(model, g, data.val, cfg.threshold, pos_weight, cfg.batch_size);
    const EvalResult test =
        evaluate(model, g, data.test, cfg.threshold, pos_weight, cfg.batch_size);
    report.val_graph_f1 = val.graph_f1;
    report.val_node_f1 = val.node_f1;
    report.graph_f1 = test.graph_f1;
    report.node_f1 = test.node_f1;
    report.test_loss = test.loss;
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

std::string GridResult::to_json(int indent) const {
    json j;
    j["truncated"] = truncated;
    json runs = json::array();
    for (const GridEntry& e : entries) runs.push_back(json::parse(e.report.to_json()));
    j["runs"] = std::move(runs);
    if (!entries.empty()) {
        const GridEntry& champ = entries.front();
        j["champion"] = {{"config", json::parse(model_config_to_json(champ.config))},
                         {"val_graph_f1", champ.report.val_graph_f1},
                         {"val_node_f1", champ.report.val_node_f1
                                             ? json(*champ.report.val_node_f1)
                                             : json(nullptr)},
                         {"graph_f1", champ.report.graph_f1},
                         {"node_f1", champ.report.node_f1 ? json(*champ.report.node_f1)
                                                          : json(nullptr)},
                         {"test_loss", champ.report.test_loss}};
    }
    return j.dump(indent);
}

GridResult grid_search(const WdnGraph& g, const DataSplit& data, const ModelConfig& base,
                       const TrainConfig& tcfg, const GridSpec& space, std::size_t budget,
                       std::size_t jobs) {
    GridSpec sp = space;
    if (sp.layers.empty()) {
        sp.layers = {LayerKind::Gcn, LayerKind::Sage,        LayerKind::Gat,
                     LayerKind::GatV2, LayerKind::Gen, LayerKind::Transformer};
    }
    if (sp.depths.empty() || sp.hiddens.empty()) {
        throw ConfigError("grid_search: empty search space");
    }

    std::vector<ModelConfig> cells;
    for (LayerKind kind : sp.layers) {
        for (std::size_t depth : sp.depths) {
            for (std::size_t hidden : sp.hiddens) {
                ModelConfig mc = base;
                mc.layer = kind;
                mc.depth = depth;
                mc.hidden = hidden;
                mc.edge_dim = layer_uses_edge_features(kind) ? base.edge_dim : 0;
                validate_config(mc);
                cells.push_back(mc);
            }
        }
    }

    GridResult result;
    if (budget > 0 && cells.size() > budget) {
        cells.resize(budget);
        result.truncated = true;
    }

    std::vector<GridEntry> entries(cells.size());
    auto run_cell = [&](std::size_t i) {
        LeakModel m = LeakModel::init(cells[i]);
        entries[i] = {cells[i], train(m, g, data, tcfg)};
    };

    if (jobs <= 1 || cells.size() <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= cells.size()) return;
                try {
                    run_cell(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        const std::size_t n_threads = std::min(jobs, cells.size());
        pool.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    std::vector<std::size_t> rank(entries.size());
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        const MetricsReport& ra = entries[a].report;
        const MetricsReport& rb = entries[b].report;
        if (ra.val_graph_f1 != rb.val_graph_f1) return ra.val_graph_f1 > rb.val_graph_f1;
        const double na = ra.val_node_f1.value_or(-1.0);
        const double nb = rb.val_node_f1.value_or(-1.0);
        return na > nb;
    });
    result.entries.reserve(entries.size());
    for (std::size_t i : rank) result.entries.push_back(std::move(entries[i]));
    return result;
}

}  // namespace leakgnn
