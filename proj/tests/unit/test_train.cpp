#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "leakgnn/errors.hpp"
#include "leakgnn/train.hpp"

using namespace leakgnn;

namespace {

// Labels depend only on node-feature column 0: positives carry +2, negatives
// -2, with small per-node jitter.  Linearly separable by construction.
DataSplit separable_toy(const WdnGraph& g, std::size_t per_split, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 0.1);
    auto make = [&](std::size_t count) {
        std::vector<Sample> out;
        for (std::size_t i = 0; i < count; ++i) {
            const double label = i % 2 == 0 ? 1.0 : 0.0;
            std::vector<double> feats(g.num_nodes * 4);
            for (std::size_t v = 0; v < g.num_nodes; ++v) {
                feats[v * 4 + 0] = (label > 0.5 ? 2.0 : -2.0) + jitter(rng);
                for (std::size_t c = 1; c < 4; ++c) feats[v * 4 + c] = jitter(rng);
            }
            Sample s;
            s.node_features = Tensor({g.num_nodes, 4}, std::move(feats));
            s.node_labels.assign(g.num_nodes, label);
            s.graph_label = label;
            s.window_start = i + 1;
            s.scenario_id = "toy";
            out.push_back(std::move(s));
        }
        return out;
    };
    return DataSplit{make(per_split), make(per_split / 2), make(per_split / 2)};
}

std::vector<std::pair<std::string, Tensor>> single_param(std::vector<double> vals,
                                                         std::vector<double> grads) {
    const std::size_t n = vals.size();
    Tensor t({n}, std::move(vals), true);
    t.node()->grad = std::move(grads);
    return {{"w", t}};
}

TrainConfig quiet_config() {
    TrainConfig cfg;
    cfg.max_epochs = 30;
    cfg.batch_size = 8;
    return cfg;
}

}  // namespace

TEST_CASE("f1 matches the confusion-matrix formula on every length-8 vector") {
    for (unsigned p = 0; p < 256; ++p) {
        for (unsigned l = 0; l < 256; ++l) {
            std::vector<int> preds(8), labels(8);
            double tp = 0, fp = 0, fn = 0;
            for (int i = 0; i < 8; ++i) {
                preds[i] = (p >> i) & 1;
                labels[i] = (l >> i) & 1;
                tp += preds[i] == 1 && labels[i] == 1;
                fp += preds[i] == 1 && labels[i] == 0;
                fn += preds[i] == 0 && labels[i] == 1;
            }
            const double denom = 2 * tp + fp + fn;
            const double expected = denom > 0 ? 2 * tp / denom : 0.0;
            CHECK(f1_score(preds, labels) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
    CHECK(f1_score({1, 1}, {1, 0}) == doctest::Approx(2.0 / 3.0));
    CHECK(f1_score({0, 0, 0}, {0, 1, 0}) == 0.0);
    CHECK_THROWS_AS(f1_score({1}, {1, 0}), ShapeError);
}

TEST_CASE("gradient clipping rescales to the norm threshold") {
    auto params = single_param({0.0, 0.0}, {3.0, 4.0});
    CHECK(clip_gradients(params, 1.0) == doctest::Approx(0.2));
    CHECK(params[0].second.grad()[0] == doctest::Approx(0.6));
    CHECK(params[0].second.grad()[1] == doctest::Approx(0.8));
    double norm = 0;
    for (double gv : params[0].second.grad()) norm += gv * gv;
    CHECK(std::sqrt(norm) <= 1.0 + 1e-12);

    auto small = single_param({0.0}, {0.5});
    CHECK(clip_gradients(small, 1.0) == 1.0);
    CHECK(small[0].second.grad()[0] == 0.5);

    auto zero = single_param({0.0}, {0.0});
    CHECK(clip_gradients(zero, 1.0) == 1.0);
}

TEST_CASE("first adamw step matches the closed form") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.clip_norm = 10.0;  // keep the unit gradient unclipped
    auto params = single_param({1.0}, {1.0});
    AdamW opt(params, cfg);
    opt.step();
    // m-hat = v-hat = 1 after bias correction, so the update is lr/(1+eps).
    CHECK(params[0].second.values()[0] ==
          doctest::Approx(1.0 - 0.001 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("zero gradients leave parameters unchanged without decay") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    auto params = single_param({0.7, -0.3}, {0.0, 0.0});
    AdamW opt(params, cfg);
    opt.step();
    CHECK(params[0].second.values()[0] == 0.7);
    CHECK(params[0].second.values()[1] == -0.3);
}

TEST_CASE("decoupled weight decay shrinks by exactly (1 - lr*wd)") {
    TrainConfig cfg;
    cfg.weight_decay = 0.01;
    auto params = single_param({2.0}, {0.0});
    AdamW opt(params, cfg);
    opt.step();
    CHECK(params[0].second.values()[0] == doctest::Approx(2.0 * (1.0 - 0.001 * 0.01)));
}

TEST_CASE("non-finite gradients abort with the parameter name") {
    auto params = single_param({1.0}, {std::nan("")});
    AdamW opt(params, TrainConfig{});
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("'w'"), NumericError);
}

TEST_CASE("plateau scheduler halves after patience non-improving epochs") {
    PlateauScheduler sched(0.5, 3, 1e-6, 1e-4);
    double lr = 0.1;
    lr = sched.step(1.0, lr);
    CHECK(lr == 0.1);
    for (int i = 0; i < 3; ++i) {
        lr = sched.step(1.0, lr);  // flat: no improvement beyond threshold
        CHECK(lr == 0.1);
    }
    lr = sched.step(1.0, lr);  // patience exceeded
    CHECK(lr == doctest::Approx(0.05));

    // Strictly improving losses never reduce the rate.
    PlateauScheduler improving(0.5, 2, 1e-6, 1e-4);
    double lr2 = 0.1;
    for (int i = 0; i < 10; ++i) {
        lr2 = improving.step(1.0 - 0.01 * i, lr2);
        CHECK(lr2 == 0.1);
    }

    // The floor holds.
    PlateauScheduler floored(0.5, 1, 1e-6, 1e-4);
    double lr3 = 1.5e-6;
    lr3 = floored.step(1.0, lr3);
    lr3 = floored.step(1.0, lr3);
    lr3 = floored.step(1.0, lr3);
    CHECK(lr3 == doctest::Approx(1e-6));
    lr3 = floored.step(1.0, lr3);
    lr3 = floored.step(1.0, lr3);
    CHECK(lr3 == doctest::Approx(1e-6));
}

TEST_CASE("training config validation rejects out-of-range values") {
    TrainConfig cfg;
    validate_train_config(cfg);
    cfg.lr = 0.0;
    CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
    cfg = TrainConfig{};
    cfg.scheduler_factor = 1.5;
    CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
    cfg = TrainConfig{};
    cfg.threshold = 1.0;
    CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
}

TEST_CASE("loss is non-increasing over the first steps on a fixed batch") {
    std::mt19937_64 rng(5);
    WdnGraph g = fixtures::random_graph(rng, 6);
    DataSplit data = separable_toy(g, 8, 1);

    ModelConfig mc;
    mc.layer = LayerKind::Gcn;
    mc.depth = 2;
    mc.hidden = 16;
    mc.task = Task::GraphDetection;
    mc.seed = 7;
    LeakModel model = LeakModel::init(mc);

    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.weight_decay = 0.0;
    AdamW opt(model.named_parameters(), cfg);

    std::vector<const Sample*> items;
    for (const Sample& s : data.train) items.push_back(&s);
    std::vector<Tensor> xs;
    std::vector<double> targets;
    for (const Sample* s : items) {
        xs.push_back(s->node_features);
        targets.push_back(s->graph_label);
    }
    GraphBatch gb = replicate_batch(g, items.size());
    Tensor x = stack_features(xs);
    Tensor t({targets.size()}, targets);

    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 5; ++step) {
        Tape tape;
        Tensor loss = bce_from_logits(
            model.graph_logits(gb.merged, x, Tensor(), gb.graph_of_node, gb.num_graphs), t);
        tape.backward(loss);
        CHECK(loss.item() <= prev + 1e-12);
        prev = loss.item();
        opt.step();
        opt.zero_grad();
    }
}

TEST_CASE("training solves the separable toy task") {
    std::mt19937_64 rng(6);
    WdnGraph g = fixtures::random_graph(rng, 6);
    DataSplit data = separable_toy(g, 24, 2);

    ModelConfig mc;
    mc.layer = LayerKind::Gcn;
    mc.depth = 2;
    mc.hidden = 16;
    mc.task = Task::GraphDetection;
    mc.seed = 3;
    LeakModel model = LeakModel::init(mc);

    TrainConfig cfg = quiet_config();
    cfg.max_epochs = 50;
    cfg.lr = 0.01;  // desk-scale toy: reach the optimum within the epoch cap
    MetricsReport rep = train(model, g, data, cfg);
    CHECK(rep.graph_f1 >= 0.99);
    CHECK(rep.epochs_run <= 50);
    CHECK(rep.history.size() == rep.epochs_run);
    CHECK(rep.best_epoch >= 1);
    CHECK(rep.test_loss >= 0.0);
}

TEST_CASE("early stopping restores the best validation parameters") {
    std::mt19937_64 rng(8);
    WdnGraph g = fixtures::random_graph(rng, 5);
    DataSplit data = separable_toy(g, 12, 3);

    ModelConfig mc;
    mc.layer = LayerKind::Sage;
    mc.depth = 2;
    mc.hidden = 16;
    mc.task = Task::GraphDetection;
    mc.seed = 1;
    LeakModel model = LeakModel::init(mc);

    TrainConfig cfg = quiet_config();
    cfg.lr = 0.05;  // overshoot so validation loss oscillates
    cfg.max_epochs = 40;
    cfg.patience = 3;
    MetricsReport rep = train(model, g, data, cfg);

    double best_seen = std::numeric_limits<double>::infinity();
    for (const EpochRecord& e : rep.history) best_seen = std::min(best_seen, e.val_loss);
    const EvalResult val = evaluate(model, g, data.val, cfg.threshold, 1.0, cfg.batch_size);
    CHECK(val.loss == doctest::Approx(best_seen).epsilon(1e-12));
    CHECK(rep.history[rep.best_epoch - 1].val_loss == doctest::Approx(best_seen));
    if (rep.early_stopped) CHECK(rep.epochs_run < cfg.max_epochs);
}

TEST_CASE("patience one stops on the second non-improving epoch") {
    std::mt19937_64 rng(9);
    WdnGraph g = fixtures::random_graph(rng, 4);
    DataSplit data = separable_toy(g, 8, 4);
    // Invert validation labels: every step toward the training labels makes
    // validation strictly worse, so no epoch after the first improves.
    for (Sample& s : data.val) {
        s.graph_label = 1.0 - s.graph_label;
        for (double& v : s.node_labels) v = 1.0 - v;
    }

    ModelConfig mc;
    mc.layer = LayerKind::Gcn;
    mc.depth = 2;
    mc.hidden = 16;
    mc.task = Task::GraphDetection;
    mc.seed = 2;
    LeakModel model = LeakModel::init(mc);

    TrainConfig cfg = quiet_config();
    cfg.lr = 0.01;
    cfg.patience = 1;
    MetricsReport rep = train(model, g, data, cfg);
    CHECK(rep.early_stopped);
    CHECK(rep.epochs_run <= 3);
}

TEST_CASE("identical seeds give identical reports") {
    std::mt19937_64 rng(10);
    WdnGraph g = fixtures::random_graph(rng, 5);
    DataSplit data = separable_toy(g, 10, 5);

    ModelConfig mc;
    mc.layer = LayerKind::Gat;
    mc.depth = 2;
    mc.hidden = 16;
    mc.task = Task::GraphDetection;
    mc.seed = 5;

    TrainConfig cfg = quiet_config();
    cfg.max_epochs = 6;

    LeakModel m1 = LeakModel::init(mc);
    LeakModel m2 = LeakModel::init(mc);
    MetricsReport r1 = train(m1, g, data, cfg);
    MetricsReport r2 = train(m2, g, data, cfg);
    r1.runtime_seconds = 0.0;
    r2.runtime_seconds = 0.0;
    CHECK(r1.to_json() == r2.to_json());

    const auto p1 = m1.named_parameters();
    const auto p2 = m2.named_parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].second.values() == p2[i].second.values());
    }
}

TEST_CASE("node task reweights positives and reports node f1") {
    std::mt19937_64 rng(11);
    WdnGraph g = fixtures::random_graph(rng, 6);
    DataSplit data = separable_toy(g, 10, 6);
    // Make node labels sparse: only node 0 positive on leaky samples.
    auto sparsify = [&](std::vector<Sample>& ss) {
        for (Sample& s : ss) {
            for (std::size_t v = 1; v < g.num_nodes; ++v) s.node_labels[v] = 0.0;
        }
    };
    sparsify(data.train);
    sparsify(data.val);
    sparsify(data.test);

    const double pw = node_pos_weight(data.train);
    CHECK(pw > 1.0);
    CHECK(pw <= 50.0);

    ModelConfig mc;
    mc.layer = LayerKind::Gcn;
    mc.depth = 2;
    mc.hidden = 16;
    mc.task = Task::NodeLocalization;
    mc.seed = 4;
    LeakModel model = LeakModel::init(mc);
    TrainConfig cfg = quiet_config();
    cfg.max_epochs = 5;
    MetricsReport rep = train(model, g, data, cfg);
    CHECK(rep.node_f1.has_value());
    CHECK(rep.val_node_f1.has_value());
    CHECK(rep.to_json().find("\"node_f1\"") != std::string::npos);
}

TEST_CASE("empty splits are rejected") {
    std::mt19937_64 rng(12);
    WdnGraph g = fixtures::random_graph(rng, 4);
    DataSplit data = separable_toy(g, 6, 7);
    data.val.clear();
    ModelConfig mc;
    mc.layer = LayerKind::Gcn;
    mc.depth = 2;
    mc.hidden = 16;
    LeakModel model = LeakModel::init(mc);
    CHECK_THROWS_AS(train(model, g, data, TrainConfig{}), ConfigError);
}

TEST_CASE("grid search ranks by validation graph f1 and marks truncation") {
    std::mt19937_64 rng(13);
    WdnGraph g = fixtures::random_graph(rng, 5);
    DataSplit data = separable_toy(g, 10, 8);

    ModelConfig base;
    base.task = Task::GraphDetection;
    base.in_dim = 4;
    base.edge_dim = 0;
    base.seed = 9;

    TrainConfig cfg = quiet_config();
    cfg.max_epochs = 3;

    GridSpec space;
    space.layers = {LayerKind::Gcn, LayerKind::Sage};
    space.depths = {2};
    space.hiddens = {16, 32};

    GridResult res = grid_search(g, data, base, cfg, space, 0, 2);
    CHECK(res.entries.size() == 4);
    CHECK_FALSE(res.truncated);
    for (std::size_t i = 1; i < res.entries.size(); ++i) {
        CHECK(res.entries[0].report.val_graph_f1 >= res.entries[i].report.val_graph_f1);
    }
    const std::string summary = res.to_json();
    CHECK(summary.find("\"champion\"") != std::string::npos);

    GridResult cut = grid_search(g, data, base, cfg, space, 2, 1);
    CHECK(cut.entries.size() == 2);
    CHECK(cut.truncated);

    // Identical inputs rank identically regardless of the thread count.
    GridResult seq = grid_search(g, data, base, cfg, space, 0, 1);
    REQUIRE(seq.entries.size() == res.entries.size());
    for (std::size_t i = 0; i < seq.entries.size(); ++i) {
        MetricsReport a = seq.entries[i].report;
        MetricsReport b = res.entries[i].report;
        a.runtime_seconds = b.runtime_seconds = 0.0;
        CHECK(a.to_json() == b.to_json());
    }
}
