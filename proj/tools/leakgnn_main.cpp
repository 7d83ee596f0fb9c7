// Command-line front end: five subcommands (synth, train, tune, evaluate,
// explain) over the pipeline entry points.  Flags beat config-file values,
// which beat built-in defaults.  Exit codes: 0 success, 2 for configuration,
// input-format, or validation problems, 1 for anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "leakgnn/errors.hpp"
#include "leakgnn/layers.hpp"
#include "leakgnn/model.hpp"
#include "leakgnn/pipeline.hpp"

namespace {

using namespace leakgnn;

// Reads flat key=value files and applies every key to whichever subcommand
// was invoked; values for options already given on the command line are
// ignored, so flags always win.
class FlatConfig : public CLI::ConfigBase {
  public:
    explicit FlatConfig(const CLI::App* root) : root_(root) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        auto items = CLI::ConfigBase::from_config(input);
        const auto subs = root_->get_subcommands();
        if (subs.empty()) return items;
        const std::vector<std::string> scope = {subs.front()->get_name()};
        for (auto& item : items) {
            if (item.parents.empty() && item.name != "++" && item.name != "--") {
                item.parents = scope;
            }
        }
        return items;
    }

  private:
    const CLI::App* root_;
};

std::vector<LayerKind> parse_layer_list(const std::string& csv) {
    std::vector<LayerKind> kinds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto a = item.find_first_not_of(" \t");
        if (a == std::string::npos) continue;
        const auto b = item.find_last_not_of(" \t");
        kinds.push_back(layer_kind_from_name(item.substr(a, b - a + 1)));
    }
    if (kinds.empty()) throw ConfigError("--layers needs at least one layer name");
    return kinds;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

void print_metrics(const char* split, double graph_f1,
                   const std::optional<double>& node_f1, double loss) {
    std::cout << split << " graph F1 " << fmt(graph_f1);
    if (node_f1) std::cout << "  node F1 " << fmt(*node_f1);
    std::cout << "  loss " << fmt(loss) << "\n";
}

int dispatch(const CLI::App& app, RunConfig& cfg, const std::string& layer,
             const std::string& task, const std::string& layers_csv,
             const std::string& target) {
    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    if (name == "synth") {
        cfg.synth.seed = cfg.seed;
        SynthResult r = run_synth(cfg);
        std::cout << "wrote " << r.scenarios << " scenarios to " << r.dir << "\n";
        return 0;
    }

    cfg.model.task = task_from_name(task);
    if (name == "train") {
        cfg.model.layer = layer_kind_from_name(layer);
        TrainResult r = run_train(cfg);
        std::cout << "checkpoint " << r.checkpoint_path << "\n"
                  << "metrics    " << r.metrics_path << "\n";
        print_metrics("test", r.report.graph_f1, r.report.node_f1, r.report.test_loss);
        std::cout << "epochs " << r.report.epochs_run << " (best " << r.report.best_epoch
                  << (r.report.early_stopped ? ", early stop)" : ")") << "\n";
        return 0;
    }
    if (name == "tune") {
        if (!layers_csv.empty()) cfg.grid.layers = parse_layer_list(layers_csv);
        TuneResult r = run_tune(cfg);
        std::cout << "summary " << r.summary_path << "\n"
                  << "runs " << r.grid.entries.size()
                  << (r.grid.truncated ? " (budget hit)" : "") << "\n";
        const GridEntry& best = r.grid.entries.front();
        std::cout << "champion " << layer_kind_name(best.config.layer)
                  << " depth " << best.config.depth << " hidden " << best.config.hidden
                  << "  val graph F1 " << fmt(best.report.val_graph_f1) << "\n";
        return 0;
    }
    if (name == "evaluate") {
        EvaluateResult r = run_evaluate(cfg);
        std::cout << "evaluation " << r.report_path << "\n";
        print_metrics("test", r.metrics.graph_f1, r.metrics.node_f1, r.metrics.loss);
        return 0;
    }

    // explain
    if (target == "node" && cfg.target_node.empty()) {
        throw ConfigError("--target node requires --node <id>");
    }
    if (target == "graph" && sub->count("--target") > 0 && !cfg.target_node.empty()) {
        throw ConfigError("--target graph conflicts with --node; drop one");
    }
    if (target != "graph" && target != "node") {
        throw ConfigError("unknown target \"" + target + "\"; expected graph or node");
    }
    ExplainResult r = run_explain(cfg);
    std::cout << "explanation " << r.explanation_path << "\n"
              << "scenario " << r.scenario_id << " window " << r.window_start
              << "  target " << (cfg.target_node.empty() ? "graph" : "node " + cfg.target_node)
              << "\n"
              << "subgraph pipes " << r.subgraph.pipes.size()
              << (r.mask.converged ? "" : "  (mask not converged)") << "\n";
    if (cfg.want_rules) {
        std::cout << "rule " << r.rule_path << "\n";
        if (r.rule) {
            std::cout << r.rule_text << "\n";
            if (r.fidelity) std::cout << "fidelity " << fmt(*r.fidelity) << "\n";
        } else {
            std::cout << "no rule: the mask selected no pipes\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace leakgnn;

    CLI::App app{"leak detection and explanation on water distribution networks"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "leakgnn 0.1.0");
    app.set_config("--config", "", "flat key=value settings file; command-line flags win");
    // Shared files may hold keys for other subcommands; ignore those without
    // loosening command-line parsing.
    app.allow_config_extras(CLI::config_extras_mode::ignore);
    app.config_formatter(std::make_shared<FlatConfig>(&app));

    RunConfig cfg;
    std::string layer = layer_kind_name(cfg.model.layer);
    std::string task = task_name(cfg.model.task);
    std::string target = "graph";
    std::string layers_csv;

    auto add_shared = [&](CLI::App* sub) {
        sub->fallthrough();  // lets "--config" after the subcommand reach the app
        sub->add_option("--out", cfg.out_dir, "output directory")->capture_default_str();
        sub->add_option("--seed", cfg.seed, "master seed")->capture_default_str();
    };
    auto add_data = [&](CLI::App* sub) {
        sub->add_option("--data", cfg.data_dir, "scenario corpus directory");
    };
    auto add_window = [&](CLI::App* sub) {
        sub->add_option("--window", cfg.window.length, "window length (timesteps)")
            ->capture_default_str();
        sub->add_option("--stride", cfg.window.stride, "window stride")->capture_default_str();
        sub->add_option("--train-frac", cfg.train_frac, "training split fraction")
            ->capture_default_str();
        sub->add_option("--val-frac", cfg.val_frac, "validation split fraction")
            ->capture_default_str();
        sub->add_option("--test-frac", cfg.test_frac, "test split fraction")
            ->capture_default_str();
    };
    auto add_training = [&](CLI::App* sub) {
        sub->add_option("--task", task, "prediction task: graph or node")->capture_default_str();
        sub->add_flag("--fuzzy", cfg.model.fuzzy, "feed fuzzy memberships instead of raw features");
        sub->add_flag("--allow-uninterpretable", cfg.allow_uninterpretable,
                      "keep fuzzy partitions that violate interpretability checks");
        sub->add_option("--lr", cfg.train_cfg.lr, "learning rate")->capture_default_str();
        sub->add_option("--batch-size", cfg.train_cfg.batch_size, "minibatch size")
            ->capture_default_str();
        sub->add_option("--epochs", cfg.train_cfg.max_epochs, "maximum epochs")
            ->capture_default_str();
        sub->add_option("--patience", cfg.train_cfg.patience, "early-stopping patience")
            ->capture_default_str();
        sub->add_option("--threshold", cfg.train_cfg.threshold, "decision threshold")
            ->capture_default_str();
        sub->add_option("--weight-decay", cfg.train_cfg.weight_decay, "AdamW weight decay")
            ->capture_default_str();
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scenario corpus");
    add_shared(synth);
    synth->add_option("--scenarios", cfg.synth.num_scenarios, "number of scenarios")
        ->capture_default_str();
    synth->add_option("--steps", cfg.synth.num_steps, "timesteps per scenario")
        ->capture_default_str();
    synth->add_option("--noise", cfg.synth.noise, "sensor noise standard deviation")
        ->capture_default_str();
    synth->add_option("--leak-rate", cfg.synth.leak_rate, "fraction of scenarios with a leak")
        ->capture_default_str();
    synth->add_option("--topology", cfg.topology,
                      "network topology CSV (default: built-in 32-node network)");

    CLI::App* train = app.add_subcommand("train", "train one model configuration");
    add_shared(train);
    add_data(train);
    add_window(train);
    add_training(train);
    train->add_option("--layer", layer, "gcn, sage, gat, gatv2, gen, or transformer")
        ->capture_default_str();
    train->add_option("--depth", cfg.model.depth, "message-passing layers: 2, 4, or 8")
        ->capture_default_str();
    train->add_option("--hidden", cfg.model.hidden, "channel width: 16, 32, or 64")
        ->capture_default_str();

    CLI::App* tune = app.add_subcommand("tune", "grid-search layers, depths, and widths");
    add_shared(tune);
    add_data(tune);
    add_window(tune);
    add_training(tune);
    tune->add_option("--layers", layers_csv, "comma-separated layer names (default: all six)");
    tune->add_option("--budget", cfg.budget, "stop after this many runs (0 = full grid)")
        ->capture_default_str();
    tune->add_option("--jobs", cfg.jobs, "concurrent training runs")->capture_default_str();

    CLI::App* evaluate =
        app.add_subcommand("evaluate", "re-evaluate a checkpoint on its test split");
    add_shared(evaluate);
    add_data(evaluate);
    evaluate->add_option("--checkpoint", cfg.checkpoint, "checkpoint file from train");

    CLI::App* explain = app.add_subcommand("explain", "explain one prediction of a checkpoint");
    add_shared(explain);
    add_data(explain);
    explain->add_option("--checkpoint", cfg.checkpoint, "checkpoint file from train");
    explain->add_option("--scenario", cfg.scenario, "scenario id (default: first test scenario)");
    explain->add_option("--window-start", cfg.window_start,
                        "1-based window start (default: the scenario's first window)");
    explain->add_option("--node", cfg.target_node, "node id to explain (implies --target node)");
    explain->add_option("--target", target, "explanation target: graph or node")
        ->capture_default_str();
    explain->add_flag("--rules", cfg.want_rules, "extract a fuzzy rule (needs a fuzzy model)");
    explain->add_option("--top-k", cfg.top_k, "subgraph edge budget")->capture_default_str();
    explain->add_option("--mask-threshold", cfg.mask_threshold, "subgraph mask cutoff")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        return dispatch(app, cfg, layer, task, layers_csv, target);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const GenerationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
