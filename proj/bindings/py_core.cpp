// Python bindings over the pipeline entry points plus a few pure helpers.
// Result dictionaries mirror the JSON artifacts the CLI writes, so scripted
// runs and shell runs read identically.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>
#include <string>

#include "leakgnn/data.hpp"
#include "leakgnn/errors.hpp"
#include "leakgnn/fuzzy.hpp"
#include "leakgnn/layers.hpp"
#include "leakgnn/model.hpp"
#include "leakgnn/pipeline.hpp"

namespace py = pybind11;
using namespace leakgnn;

namespace {

py::object load_artifact(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw FormatError("cannot open artifact: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return py::module_::import("json").attr("loads")(ss.str());
}

RunConfig base_config(const std::string& data, const std::string& out, std::uint64_t seed) {
    RunConfig cfg;
    cfg.data_dir = data;
    cfg.out_dir = out;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "leak detection and explanation on water distribution networks";
    m.attr("__version__") = "0.1.0";

    // Translated most-specific first: pybind11 tries newer translators first.
    py::register_exception<Error>(m, "Error");
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def(
        "synth",
        [](const std::string& out, std::size_t scenarios, std::size_t steps, double noise,
           double leak_rate, std::uint64_t seed, const std::string& topology) {
            RunConfig cfg = base_config("", out, seed);
            cfg.topology = topology;
            cfg.synth.num_scenarios = scenarios;
            cfg.synth.num_steps = steps;
            cfg.synth.noise = noise;
            cfg.synth.leak_rate = leak_rate;
            const SynthResult r = run_synth(cfg);
            py::dict d;
            d["dir"] = r.dir;
            d["scenarios"] = r.scenarios;
            return d;
        },
        py::arg("out"), py::arg("scenarios") = 50, py::arg("steps") = 240,
        py::arg("noise") = 0.1, py::arg("leak_rate") = 0.8, py::arg("seed") = 0,
        py::arg("topology") = "",
        "Generate a synthetic scenario corpus; returns its location and size.");

    m.def(
        "train",
        [](const std::string& data, const std::string& out, const std::string& layer,
           std::size_t depth, std::size_t hidden, const std::string& task, bool fuzzy,
           std::size_t window, std::size_t stride, std::size_t epochs, std::size_t batch_size,
           double lr, double train_frac, double val_frac, double test_frac,
           bool allow_uninterpretable, std::uint64_t seed) {
            RunConfig cfg = base_config(data, out, seed);
            cfg.model.layer = layer_kind_from_name(layer);
            cfg.model.depth = depth;
            cfg.model.hidden = hidden;
            cfg.model.task = task_from_name(task);
            cfg.model.fuzzy = fuzzy;
            cfg.window = {window, stride};
            cfg.train_cfg.max_epochs = epochs;
            cfg.train_cfg.batch_size = batch_size;
            cfg.train_cfg.lr = lr;
            cfg.train_frac = train_frac;
            cfg.val_frac = val_frac;
            cfg.test_frac = test_frac;
            cfg.allow_uninterpretable = allow_uninterpretable;
            const TrainResult r = run_train(cfg);
            py::dict d;
            d["checkpoint"] = r.checkpoint_path;
            d["metrics"] = load_artifact(r.metrics_path);
            return d;
        },
        py::arg("data"), py::arg("out"), py::arg("layer") = "gen", py::arg("depth") = 2,
        py::arg("hidden") = 32, py::arg("task") = "graph", py::arg("fuzzy") = false,
        py::arg("window") = 48, py::arg("stride") = 24, py::arg("epochs") = 500,
        py::arg("batch_size") = 512, py::arg("lr") = 1e-3, py::arg("train_frac") = 0.7,
        py::arg("val_frac") = 0.15, py::arg("test_frac") = 0.15,
        py::arg("allow_uninterpretable") = false, py::arg("seed") = 0,
        "Train one configuration; returns the checkpoint path and the metrics report.");

    m.def(
        "evaluate",
        [](const std::string& data, const std::string& out, const std::string& checkpoint) {
            RunConfig cfg = base_config(data, out, 0);
            cfg.checkpoint = checkpoint;
            const EvaluateResult r = run_evaluate(cfg);
            return load_artifact(r.report_path);
        },
        py::arg("data"), py::arg("out"), py::arg("checkpoint"),
        "Re-evaluate a checkpoint on its stored test split; returns the report.");

    m.def(
        "explain",
        [](const std::string& data, const std::string& out, const std::string& checkpoint,
           const std::string& scenario, std::size_t window_start, const std::string& node,
           bool rules, std::size_t top_k, double mask_threshold, std::uint64_t seed) {
            RunConfig cfg = base_config(data, out, seed);
            cfg.checkpoint = checkpoint;
            cfg.scenario = scenario;
            cfg.window_start = window_start;
            cfg.target_node = node;
            cfg.want_rules = rules;
            cfg.top_k = top_k;
            cfg.mask_threshold = mask_threshold;
            const ExplainResult r = run_explain(cfg);
            py::dict d;
            d["explanation"] = load_artifact(r.explanation_path);
            d["rule"] = r.rule_path.empty() ? py::object(py::none())
                                            : load_artifact(r.rule_path);
            d["rule_text"] = r.rule_text;
            return d;
        },
        py::arg("data"), py::arg("out"), py::arg("checkpoint"), py::arg("scenario") = "",
        py::arg("window_start") = 0, py::arg("node") = "", py::arg("rules") = false,
        py::arg("top_k") = 4, py::arg("mask_threshold") = 0.5, py::arg("seed") = 0,
        "Explain one prediction; returns the mask artifact and any extracted rule.");

    m.def(
        "fuzzy_memberships",
        [](double lo, double hi, double x) {
            const FuzzyPartition p = build_partition("feature", lo, hi);
            const auto mu = memberships(p, x);
            return py::make_tuple(mu[0], mu[1], mu[2]);
        },
        py::arg("lo"), py::arg("hi"), py::arg("x"),
        "Low/Medium/High membership degrees of x on a triangular partition of [lo, hi].");

    m.def(
        "window_stats",
        [](const std::vector<double>& values) {
            if (values.empty()) throw ConfigError("window_stats needs at least one value");
            const WindowStats s = window_stats(values.data(), values.size());
            py::dict d;
            d["mean"] = s.mean;
            d["stddev"] = s.stddev;
            d["min"] = s.min;
            d["max"] = s.max;
            return d;
        },
        py::arg("values"),
        "Mean, population standard deviation, min, and max of a window of readings.");
}
