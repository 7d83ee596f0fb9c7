#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "leakgnn/data.hpp"
#include "leakgnn/graph.hpp"
#include "leakgnn/model.hpp"
#include "leakgnn/tensor.hpp"

namespace leakgnn {

struct TrainConfig {
    double lr = 0.001;
    std::size_t batch_size = 512;  // capped at the training-set size
    std::size_t max_epochs = 500;
    std::size_t patience = 10;     // early-stop epochs without val improvement
    double clip_norm = 1.0;        // global L2 gradient norm threshold
    double weight_decay = 0.01;
    double scheduler_factor = 0.5;
    std::size_t scheduler_patience = 5;
    double min_lr = 1e-6;
    double scheduler_threshold = 1e-4;  // required improvement for the scheduler
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double threshold = 0.5;        // probability cut for binary predictions
    bool auto_pos_weight = true;   // rebalance node-task positives (capped x50)
    std::uint64_t seed = 0;        // batch shuffling stream
};

void validate_train_config(const TrainConfig& cfg);

// Scales every gradient by max_norm / ||g||_2 when the global norm exceeds
// max_norm; returns the factor applied (1 when already within bounds).
double clip_gradients(const std::vector<std::pair<std::string, Tensor>>& params,
                      double max_norm);

// Adam with decoupled weight decay: each step first shrinks the parameter by
// lr * weight_decay * value, then applies the bias-corrected moment update.
// Gradients are clipped to clip_norm before the update; a non-finite gradient
// aborts with a NumericError naming the offending parameter.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg);

    double step();  // returns the clip factor applied this step
    void zero_grad();

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    std::size_t steps_taken() const { return t_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, weight_decay_, beta1_, beta2_, eps_, clip_norm_;
    std::size_t t_ = 0;
};

// Multiplies the learning rate by `factor` once the monitored loss has gone
// more than `patience` consecutive steps without improving by at least
// `threshold`; the rate never drops below min_lr.
class PlateauScheduler {
public:
    PlateauScheduler(double factor, std::size_t patience, double min_lr,
                     double threshold);

    double step(double monitored, double current_lr);

private:
    double factor_, min_lr_, threshold_, best_;
    std::size_t patience_, bad_ = 0;
};

// 2PR/(P+R) over 0/1 vectors; 0 when the denominator vanishes.
double f1_score(const std::vector<int>& preds, const std::vector<int>& labels);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;        // rate used during this epoch
};

struct MetricsReport {
    double graph_f1 = 0.0;
    std::optional<double> node_f1;  // localization runs only
    double test_loss = 0.0;
    double val_graph_f1 = 0.0;
    std::optional<double> val_node_f1;
    double runtime_seconds = 0.0;
    std::size_t best_epoch = 0;  // epoch whose parameters were kept
    std::size_t epochs_run = 0;
    bool early_stopped = false;
    std::string config_json = "{}";  // resolved model + training settings
    std::vector<EpochRecord> history;

    // Field names are stable: graph_f1, node_f1, test_loss, runtime_seconds,
    // config, history, plus the validation and stopping bookkeeping above.
    std::string to_json(int indent = 2) const;
};

std::string config_to_json(const ModelConfig& mc, const TrainConfig& tc);

struct DataSplit {
    std::vector<Sample> train, val, test;
};

struct EvalResult {
    double loss = 0.0;
    double graph_f1 = 0.0;
    std::optional<double> node_f1;
};

// Loss and F1 metrics of a frozen model over samples that all share `g`.
// `pos_weight` multiplies positive node targets inside the loss only.
EvalResult evaluate(const LeakModel& model, const WdnGraph& g,
                    const std::vector<Sample>& samples, double threshold,
                    double pos_weight = 1.0, std::size_t batch_size = 512);

// Positive-class weight used by node-task training: min(50, negatives /
// positives) over training-split node labels, at least 1.
double node_pos_weight(const std::vector<Sample>& train);

// Full optimization loop: minibatch AdamW with gradient clipping, plateau
// scheduling on validation loss, early stopping with best-parameter restore,
// and one final test evaluation.  The model is updated in place.
MetricsReport train(LeakModel& model, const WdnGraph& g, const DataSplit& data,
                    const TrainConfig& cfg);

struct GridSpec {
    std::vector<LayerKind> layers;            // empty = all six
    std::vector<std::size_t> depths = {2, 4, 8};
    std::vector<std::size_t> hiddens = {16, 32, 64};
};

struct GridEntry {
    ModelConfig config;
    MetricsReport report;
};

struct GridResult {
    // Ranked by validation graph F1, then validation node F1, then the
    // enumeration order layer -> depth -> hidden; entries[0] is the champion.
    std::vector<GridEntry> entries;
    bool truncated = false;  // budget cut the grid short

    std::string to_json(int indent = 2) const;  // summary.json payload
};

// Trains every (layer, depth, hidden) cell, at most `budget` runs when
// budget > 0.  `jobs` > 1 trains cells on that many threads; results are
// identical to the sequential order.  `base` supplies task, input widths,
// fuzziness, and the weight-init seed shared by every cell.
GridResult grid_search(const WdnGraph& g, const DataSplit& data,
                       const ModelConfig& base, const TrainConfig& tcfg,
                       const GridSpec& space, std::size_t budget = 0,
                       std::size_t jobs = 1);

}  // namespace leakgnn
