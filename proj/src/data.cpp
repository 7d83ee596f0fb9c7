#include "leakgnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "leakgnn/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace leakgnn {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(context + ": not a number: \"" + s + "\"");
    }
}

void check_window_spec(WindowSpec spec) {
    if (spec.length == 0) throw ConfigError("window length must be at least 1");
    if (spec.stride == 0) throw ConfigError("window stride must be at least 1");
}

}  // namespace

std::vector<std::size_t> window_starts(std::size_t num_steps, WindowSpec spec) {
    check_window_spec(spec);
    std::vector<std::size_t> starts;
    for (std::size_t k = 1; k + spec.length - 1 <= num_steps; k += spec.stride) {
        starts.push_back(k);
    }
    return starts;
}

WindowStats window_stats(const double* data, std::size_t n) {
    if (n == 0) throw ShapeError("window_stats requires at least one value");
    WindowStats s;
    s.min = s.max = data[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += data[i];
        s.min = std::min(s.min, data[i]);
        s.max = std::max(s.max, data[i]);
    }
    s.mean = acc / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double c = data[i] - s.mean;
        var += c * c;
    }
    s.stddev = std::sqrt(var / static_cast<double>(n));
    return s;
}

std::vector<std::string> node_feature_names() {
    return {"Pressure-mean", "Pressure-std", "Pressure-min", "Pressure-max"};
}

std::vector<std::string> edge_feature_names() {
    return {"Flow-mean", "Flow-std", "Flow-min", "Flow-max"};
}

std::vector<Sample> build_samples(const WdnGraph& g, const Scenario& s, WindowSpec spec) {
    check_window_spec(spec);
    if (s.pressure.size() != s.num_steps * g.num_nodes) {
        throw ValidationError("scenario " + s.id + ": pressure matrix has " +
                              std::to_string(s.pressure.size()) + " values, expected " +
                              std::to_string(s.num_steps * g.num_nodes));
    }
    if (s.flow.size() != s.num_steps * g.num_pipes()) {
        throw ValidationError("scenario " + s.id + ": flow matrix has " +
                              std::to_string(s.flow.size()) + " values, expected " +
                              std::to_string(s.num_steps * g.num_pipes()));
    }
    for (const auto& e : s.leaks) {
        if (e.node >= g.num_nodes) {
            throw ValidationError("scenario " + s.id + ": leak node " +
                                  std::to_string(e.node) + " out of range");
        }
        if (e.start < 1 || e.start > e.end || e.end > s.num_steps) {
            throw ValidationError("scenario " + s.id + ": leak interval [" +
                                  std::to_string(e.start) + "," + std::to_string(e.end) +
                                  "] invalid for " + std::to_string(s.num_steps) +
                                  " steps");
        }
    }

    const std::size_t n = g.num_nodes, p_count = g.num_pipes(), w = spec.length;
    std::vector<Sample> out;
    std::vector<double> series(w);
    for (std::size_t start : window_starts(s.num_steps, spec)) {
        Sample smp;
        smp.window_start = start;
        smp.scenario_id = s.id;
        smp.leak_node = std::numeric_limits<std::size_t>::max();

        std::vector<double> nf(n * 4);
        for (std::size_t v = 0; v < n; ++v) {
            for (std::size_t t = 0; t < w; ++t) {
                series[t] = s.pressure[(start - 1 + t) * n + v];
            }
            const WindowStats st = window_stats(series.data(), w);
            nf[v * 4 + 0] = st.mean;
            nf[v * 4 + 1] = st.stddev;
            nf[v * 4 + 2] = st.min;
            nf[v * 4 + 3] = st.max;
        }
        smp.node_features = Tensor({n, 4}, std::move(nf));

        std::vector<double> ef(g.num_edges() * 4);
        for (std::size_t p = 0; p < p_count; ++p) {
            for (std::size_t t = 0; t < w; ++t) {
                series[t] = s.flow[(start - 1 + t) * p_count + p];
            }
            const WindowStats st = window_stats(series.data(), w);
            const double vals[4] = {st.mean, st.stddev, st.min, st.max};
            for (std::size_t j = 0; j < 4; ++j) {
                ef[(2 * p) * 4 + j] = vals[j];      // both orientations of a pipe
                ef[(2 * p + 1) * 4 + j] = vals[j];  // carry the same measurement
            }
        }
        smp.edge_features = Tensor({g.num_edges(), 4}, std::move(ef));

        smp.node_labels.assign(n, 0.0);
        const std::size_t wnd_end = start + w - 1;
        for (const auto& e : s.leaks) {
            if (e.start > wnd_end || e.end < start) continue;
            smp.node_labels[e.node] = 1.0;
            smp.graph_label = 1.0;
            if (smp.leak_node == std::numeric_limits<std::size_t>::max()) {
                smp.leak_node = e.node;
            }
        }
        out.push_back(std::move(smp));
    }
    return out;
}

std::vector<Scenario> synthesize_scenarios(const WdnGraph& g, const SynthConfig& cfg) {
    if (cfg.num_scenarios == 0) throw ConfigError("num_scenarios must be at least 1");
    if (cfg.num_steps == 0) throw ConfigError("num_steps must be at least 1");
    if (cfg.leak_rate < 0.0 || cfg.leak_rate > 1.0) {
        throw ConfigError("leak_rate must lie in [0,1], got " + std::to_string(cfg.leak_rate));
    }
    if (cfg.noise < 0.0) throw ConfigError("noise must be non-negative");
    if (cfg.severity_min > cfg.severity_max || cfg.severity_min < 0.0) {
        throw ConfigError("invalid severity range");
    }
    if (cfg.duration_min <= 0.0 || cfg.duration_max > 1.0 ||
        cfg.duration_min > cfg.duration_max) {
        throw ConfigError("leak duration fractions must satisfy 0 < min <= max <= 1");
    }
    if (cfg.decay_hops <= 0.0) throw ConfigError("decay_hops must be positive");
    if (!is_connected(g)) {
        throw GenerationError("scenario synthesis requires a connected topology");
    }

    const std::size_t n = g.num_nodes, p_count = g.num_pipes(), t_count = cfg.num_steps;

    // Fixed leak count: round(rate * n) scenarios get a leak, chosen by a
    // seeded shuffle so leaky ids spread across the corpus.
    const auto num_leaky = static_cast<std::size_t>(
        std::llround(cfg.leak_rate * static_cast<double>(cfg.num_scenarios)));
    std::vector<std::size_t> order(cfg.num_scenarios);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 master(cfg.seed);
    std::shuffle(order.begin(), order.end(), master);
    std::vector<bool> leaky(cfg.num_scenarios, false);
    for (std::size_t i = 0; i < num_leaky; ++i) leaky[order[i]] = true;

    std::vector<Scenario> out;
    out.reserve(cfg.num_scenarios);
    constexpr double kTwoPi = 2.0 * std::numbers::pi;

    for (std::size_t idx = 0; idx < cfg.num_scenarios; ++idx) {
        // Independent per-scenario stream so corpora of different sizes share
        // prefixes for the same seed.
        std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL +
                            0xBF58476D1CE4E5B9ULL * (idx + 1));
        std::uniform_real_distribution<double> node_off(-cfg.offset_spread,
                                                        cfg.offset_spread);
        std::uniform_real_distribution<double> pipe_off(-cfg.flow_offset_spread,
                                                        cfg.flow_offset_spread);
        std::normal_distribution<double> gauss(0.0, 1.0);

        Scenario s;
        char name[32];
        std::snprintf(name, sizeof(name), "S%04zu", idx + 1);  // S0001, S0002, ...
        s.id = name;
        s.num_steps = t_count;

        std::vector<double> noffs(n), poffs(p_count);
        for (double& v : noffs) v = node_off(rng);
        for (double& v : poffs) v = pipe_off(rng);

        std::vector<double> drop(n, 0.0);       // pressure drop at each node
        std::vector<double> pipe_gain(p_count, 0.0);
        if (leaky[idx]) {
            LeakEvent e;
            e.node = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
            e.severity = std::uniform_real_distribution<double>(cfg.severity_min,
                                                                cfg.severity_max)(rng);
            const double frac = std::uniform_real_distribution<double>(
                cfg.duration_min, cfg.duration_max)(rng);
            auto dur = static_cast<std::size_t>(
                std::llround(frac * static_cast<double>(t_count)));
            dur = std::clamp<std::size_t>(dur, 1, t_count);
            e.start = std::uniform_int_distribution<std::size_t>(
                1, t_count - dur + 1)(rng);
            e.end = e.start + dur - 1;
            s.leaks.push_back(e);

            const auto dist = hop_distances(g, e.node);
            for (std::size_t v = 0; v < n; ++v) {
                drop[v] = e.severity *
                          std::exp(-static_cast<double>(dist[v]) / cfg.decay_hops);
            }
            for (std::size_t p = 0; p < p_count; ++p) {
                const std::size_t d = std::min(dist[g.edge_src[2 * p]],
                                               dist[g.edge_dst[2 * p]]);
                pipe_gain[p] = cfg.flow_response * e.severity *
                               std::exp(-static_cast<double>(d) / cfg.decay_hops);
            }
        }

        s.pressure.resize(t_count * n);
        s.flow.resize(t_count * p_count);
        for (std::size_t t = 0; t < t_count; ++t) {
            const double diurnal =
                cfg.diurnal_amplitude * std::sin(kTwoPi * static_cast<double>(t) / 48.0);
            const bool in_leak = !s.leaks.empty() && t + 1 >= s.leaks[0].start &&
                                 t + 1 <= s.leaks[0].end;
            for (std::size_t v = 0; v < n; ++v) {
                double val = cfg.base_pressure + noffs[v] + diurnal +
                             cfg.noise * gauss(rng);
                if (in_leak) val -= drop[v];
                s.pressure[t * n + v] = val;
            }
            for (std::size_t p = 0; p < p_count; ++p) {
                double val = cfg.base_flow + poffs[p] + diurnal + cfg.noise * gauss(rng);
                if (in_leak) val += pipe_gain[p];
                s.flow[t * p_count + p] = val;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_scenarios(const std::string& dir, const WdnGraph& g,
                     const std::vector<Scenario>& scenarios,
                     const std::string& manifest_json) {
    json manifest;
    try {
        manifest = json::parse(manifest_json);
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
    }

    fs::create_directories(dir);
    save_topology(g, (fs::path(dir) / "topology.csv").string());
    {
        std::ofstream out(fs::path(dir) / "manifest.json");
        out << manifest.dump(2) << "\n";
    }

    // Timesteps are implicit row indices; 17 digits round-trips doubles.
    auto write_series = [](const fs::path& path, const std::vector<std::string>& ids,
                           const std::vector<double>& values, std::size_t steps) {
        std::ofstream out(path);
        out << std::setprecision(17);
        for (std::size_t c = 0; c < ids.size(); ++c) {
            out << (c ? "," : "") << ids[c];
        }
        out << "\n";
        for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t c = 0; c < ids.size(); ++c) {
                out << (c ? "," : "") << values[t * ids.size() + c];
            }
            out << "\n";
        }
    };

    for (const auto& s : scenarios) {
        const fs::path sdir = fs::path(dir) / s.id;
        fs::create_directories(sdir);
        write_series(sdir / "pressures.csv", g.node_ids, s.pressure, s.num_steps);
        write_series(sdir / "flows.csv", g.pipe_ids, s.flow, s.num_steps);

        json leaks = json::array();
        for (const auto& e : s.leaks) {
            leaks.push_back({{"node", g.node_ids[e.node]},
                             {"start", e.start},
                             {"end", e.end},
                             {"severity", e.severity}});
        }
        std::ofstream lj(sdir / "leaks.json");
        lj << leaks.dump(2) << "\n";
    }
}

namespace {

// Reads a wide time-series CSV and returns values in topology column order.
// Columns may appear in any order but must exactly cover `ids`.
std::vector<double> read_series_csv(const fs::path& path,
                                    const std::vector<std::string>& ids,
                                    std::size_t* num_steps) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
    const auto header = split_csv_line(line);
    if (header.size() != ids.size()) {
        throw FormatError(path.string() + ": expected " + std::to_string(ids.size()) +
                          " series columns, got " + std::to_string(header.size()));
    }
    std::map<std::string, std::size_t> want;
    for (std::size_t i = 0; i < ids.size(); ++i) want[ids[i]] = i;
    std::vector<std::size_t> col_to_slot(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        auto it = want.find(header[c]);
        if (it == want.end()) {
            throw FormatError(path.string() + ": column \"" + header[c] +
                              "\" not in topology");
        }
        col_to_slot[c] = it->second;
        want.erase(it);
    }
    if (!want.empty()) {
        throw FormatError(path.string() + ": missing column \"" + want.begin()->first + "\"");
    }

    // Timesteps are implicit: data row k is step k (1-based).
    std::vector<double> values;
    std::size_t line_no = 1, t = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        const std::string ctx = path.string() + ":" + std::to_string(line_no);
        if (fields.size() != header.size()) {
            throw FormatError(ctx + ": expected " + std::to_string(header.size()) +
                              " fields, got " + std::to_string(fields.size()));
        }
        ++t;
        values.resize(t * ids.size());
        for (std::size_t c = 0; c < fields.size(); ++c) {
            values[(t - 1) * ids.size() + col_to_slot[c]] = parse_double(fields[c], ctx);
        }
    }
    if (t == 0) throw FormatError(path.string() + ": no data rows");
    *num_steps = t;
    return values;
}

Scenario read_scenario_dir(const fs::path& sdir, const WdnGraph& g) {
    Scenario s;
    s.id = sdir.filename().string();

    std::size_t t_pressure = 0, t_flow = 0;
    s.pressure = read_series_csv(sdir / "pressures.csv", g.node_ids, &t_pressure);
    s.flow = read_series_csv(sdir / "flows.csv", g.pipe_ids, &t_flow);
    if (t_pressure != t_flow) {
        throw FormatError(sdir.string() + ": pressure has " + std::to_string(t_pressure) +
                          " steps but flow has " + std::to_string(t_flow));
    }
    s.num_steps = t_pressure;

    const std::string ctx = (sdir / "leaks.json").string();
    std::ifstream lj(sdir / "leaks.json");
    if (!lj) throw FormatError("cannot open " + ctx);
    json leaks;
    try {
        leaks = json::parse(lj);
    } catch (const json::exception& e) {
        throw FormatError(ctx + ": " + e.what());
    }
    if (!leaks.is_array()) throw FormatError(ctx + ": expected an array of leak events");
    for (const auto& el : leaks) {
        if (!el.is_object()) throw FormatError(ctx + ": leak event must be an object");
        LeakEvent e;
        if (!el.contains("node")) throw FormatError(ctx + ": leak event needs a node id");
        // Node ids are labels; bare numbers are accepted for hand-written files.
        std::string node_id;
        if (el["node"].is_string()) {
            node_id = el["node"].get<std::string>();
        } else if (el["node"].is_number_integer()) {
            node_id = std::to_string(el["node"].get<long long>());
        } else {
            throw FormatError(ctx + ": leak node must be a node id");
        }
        const auto it = std::find(g.node_ids.begin(), g.node_ids.end(), node_id);
        if (it == g.node_ids.end()) {
            throw FormatError(ctx + ": leak node \"" + node_id + "\" not in topology");
        }
        e.node = static_cast<std::size_t>(it - g.node_ids.begin());
        if (!el.contains("start") || !el.contains("end") ||
            !el["start"].is_number_unsigned() || !el["end"].is_number_unsigned()) {
            throw FormatError(ctx + ": leak start/end must be positive integers");
        }
        e.start = el["start"].get<std::size_t>();
        e.end = el["end"].get<std::size_t>();
        if (e.start < 1 || e.start > e.end || e.end > s.num_steps) {
            throw FormatError(ctx + ": leak interval [" + std::to_string(e.start) + "," +
                              std::to_string(e.end) + "] invalid for " +
                              std::to_string(s.num_steps) + " steps");
        }
        e.severity = el.value("severity", 0.0);
        s.leaks.push_back(e);
    }
    return s;
}

}  // namespace

IngestResult ingest_scenarios(const std::string& dir) {
    IngestResult result;
    result.topology = load_topology((fs::path(dir) / "topology.csv").string());

    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory()) entries.push_back(e.path());
    }
    std::sort(entries.begin(), entries.end());

    for (const auto& sdir : entries) {
        try {
            result.scenarios.push_back(read_scenario_dir(sdir, result.topology));
        } catch (const Error& e) {
            ++result.skipped;
            result.diagnostics.push_back(sdir.filename().string() + ": " + e.what());
        }
    }
    if (result.scenarios.empty()) {
        throw FormatError(dir + ": no valid scenario directories");
    }
    return result;
}

SplitIndices split_scenarios(std::size_t n, double train_frac, double val_frac,
                             double test_frac, std::uint64_t seed) {
    const double fr[3] = {train_frac, val_frac, test_frac};
    double total = 0.0;
    for (double f : fr) {
        if (f <= 0.0) throw ConfigError("split fractions must be positive");
        total += f;
    }
    if (std::fabs(total - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1, got " + std::to_string(total));
    }

    // Largest remainder; ties resolved in train, val, test order.
    std::size_t counts[3];
    double remainder[3];
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = fr[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    std::size_t leftover = n - assigned;
    int order[3] = {0, 1, 2};
    std::stable_sort(order, order + 3,
                     [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; i < leftover; ++i) counts[order[i % 3]] += 1;

    if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0) {
        throw ConfigError("split of " + std::to_string(n) +
                          " scenarios leaves an empty subset");
    }

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);

    SplitIndices out;
    out.train.assign(idx.begin(), idx.begin() + counts[0]);
    out.val.assign(idx.begin() + counts[0], idx.begin() + counts[0] + counts[1]);
    out.test.assign(idx.begin() + counts[0] + counts[1], idx.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

FeatureScaler FeatureScaler::fit(const std::vector<Tensor>& mats) {
    if (mats.empty()) throw ValidationError("FeatureScaler::fit requires at least one matrix");
    const std::size_t d = mats[0].cols();
    std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
    std::size_t rows = 0;
    for (const auto& m : mats) {
        if (m.ndim() != 2 || m.cols() != d) {
            throw ShapeError("FeatureScaler::fit: inconsistent feature width");
        }
        for (std::size_t i = 0; i < m.rows(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double v = m.at(i, j);
                sum[j] += v;
                sumsq[j] += v * v;
            }
        }
        rows += m.rows();
    }
    if (rows == 0) throw ValidationError("FeatureScaler::fit requires at least one row");

    FeatureScaler s;
    s.mean.resize(d);
    s.stddev.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        s.mean[j] = sum[j] / static_cast<double>(rows);
        const double var =
            std::max(0.0, sumsq[j] / static_cast<double>(rows) - s.mean[j] * s.mean[j]);
        const double sd = std::sqrt(var);
        s.stddev[j] = sd < 1e-12 ? 1.0 : sd;
    }
    return s;
}

Tensor FeatureScaler::transform(const Tensor& x) const {
    if (x.ndim() != 2 || x.cols() != mean.size()) {
        throw ShapeError("FeatureScaler::transform: expected " +
                         std::to_string(mean.size()) + " columns, got " +
                         detail::shape_str(x.shape()));
    }
    std::vector<double> out(x.size());
    const std::size_t d = mean.size();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out[i * d + j] = (x.at(i, j) - mean[j]) / stddev[j];
        }
    }
    return Tensor(x.shape(), std::move(out));
}

}  // namespace leakgnn
