#include "leakgnn/fuzzy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "leakgnn/errors.hpp"

using nlohmann::json;

namespace leakgnn {

namespace {

constexpr double kSlack = 1e-9;  // crossings sit exactly on the 0.5 boundary

double gauss(double x, double c, double sigma) {
    const double z = (x - c) / sigma;
    return std::exp(-0.5 * z * z);
}

}  // namespace

FuzzyPartition build_partition(const std::string& feature, double lo, double hi) {
    if (!(lo <= hi)) {
        throw DomainError("build_partition: range [" + std::to_string(lo) + "," +
                          std::to_string(hi) + "] is inverted");
    }
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        throw DomainError("build_partition: range must be finite");
    }
    FuzzyPartition p;
    p.feature = feature;
    p.min = lo;
    p.max = hi;
    if (hi - lo < 1e-12) {
        // A constant feature carries no spread; widen to a unit span so the
        // three centers stay strictly increasing.
        p.min = lo - 0.5;
        p.max = hi + 0.5;
        p.degenerate = true;
    }
    p.centers = {p.min, 0.5 * (p.min + p.max), p.max};
    const double half_range = 0.5 * (p.max - p.min);
    p.sigma = half_range / (2.0 * std::sqrt(2.0 * std::log(2.0)));
    return p;
}

double membership(const FuzzyPartition& p, std::size_t term, double x) {
    if (term >= 3) {
        throw IndexError("membership term " + std::to_string(term) + " out of range 0..2");
    }
    return gauss(x, p.centers[term], p.sigma);
}

std::array<double, 3> memberships(const FuzzyPartition& p, double x) {
    return {gauss(x, p.centers[0], p.sigma), gauss(x, p.centers[1], p.sigma),
            gauss(x, p.centers[2], p.sigma)};
}

ConstraintReport check_constraints(const FuzzyPartition& p, std::size_t probes) {
    if (probes < 3) throw ConfigError("check_constraints needs at least 3 probes");

    std::vector<double> grid(probes);
    for (std::size_t i = 0; i < probes; ++i) {
        grid[i] = p.min + (p.max - p.min) * static_cast<double>(i) /
                              static_cast<double>(probes - 1);
    }

    ConstraintReport r;

    // Normality: the center itself must reach full membership.
    r.normality = true;
    for (std::size_t t = 0; t < 3; ++t) {
        if (membership(p, t, p.centers[t]) < 1.0 - 1e-12) r.normality = false;
    }

    // Convexity: along the probe grid each curve rises to a single peak and
    // falls afterwards.
    r.convexity = true;
    for (std::size_t t = 0; t < 3; ++t) {
        bool falling = false;
        double prev = membership(p, t, grid[0]);
        for (std::size_t i = 1; i < probes; ++i) {
            const double cur = membership(p, t, grid[i]);
            if (cur < prev - kSlack) {
                falling = true;
            } else if (falling && cur > prev + kSlack) {
                r.convexity = false;
                break;
            }
            prev = cur;
        }
    }

    // Coverage: every probe belongs to some set at no less than 0.5.
    r.min_coverage = std::numeric_limits<double>::infinity();
    for (double x : grid) {
        const auto m = memberships(p, x);
        r.min_coverage = std::min(r.min_coverage, *std::max_element(m.begin(), m.end()));
    }
    r.coverage = r.min_coverage >= 0.5 - kSlack;

    // Distinguishability: discrete Jaccard overlap of every pair stays small.
    r.max_overlap = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = a + 1; b < 3; ++b) {
            double num = 0.0, den = 0.0;
            for (double x : grid) {
                const double ma = membership(p, a, x);
                const double mb = membership(p, b, x);
                num += std::min(ma, mb);
                den += std::max(ma, mb);
            }
            r.max_overlap = std::max(r.max_overlap, den > 0.0 ? num / den : 0.0);
        }
    }
    r.distinguishability = r.max_overlap <= 0.5 + kSlack;
    return r;
}

std::vector<FuzzyPartition> build_partitions(const std::vector<Tensor>& mats,
                                             const std::vector<std::string>& names) {
    if (mats.empty()) throw ValidationError("build_partitions requires at least one matrix");
    const std::size_t f = names.size();
    std::vector<double> lo(f, std::numeric_limits<double>::infinity());
    std::vector<double> hi(f, -std::numeric_limits<double>::infinity());
    std::size_t rows = 0;
    for (const auto& m : mats) {
        if (m.ndim() != 2 || m.cols() != f) {
            throw ShapeError("build_partitions: matrix " + detail::shape_str(m.shape()) +
                             " does not have " + std::to_string(f) + " columns");
        }
        for (std::size_t i = 0; i < m.rows(); ++i) {
            for (std::size_t j = 0; j < f; ++j) {
                lo[j] = std::min(lo[j], m.at(i, j));
                hi[j] = std::max(hi[j], m.at(i, j));
            }
        }
        rows += m.rows();
    }
    if (rows == 0) throw ValidationError("build_partitions requires at least one row");

    std::vector<FuzzyPartition> parts;
    parts.reserve(f);
    for (std::size_t j = 0; j < f; ++j) {
        parts.push_back(build_partition(names[j], lo[j], hi[j]));
    }
    return parts;
}

Tensor fuzzify(const Tensor& x, const std::vector<FuzzyPartition>& parts) {
    if (x.ndim() != 2 || x.cols() != parts.size()) {
        throw ShapeError("fuzzify: input " + detail::shape_str(x.shape()) +
                         " does not match " + std::to_string(parts.size()) + " partitions");
    }
    const std::size_t n = x.rows(), f = parts.size();
    std::vector<double> out(n * 3 * f);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            const auto m = memberships(parts[j], x.at(i, j));
            for (std::size_t t = 0; t < 3; ++t) out[i * 3 * f + 3 * j + t] = m[t];
        }
    }
    Tensor result({n, 3 * f}, std::move(out), x.requires_grad());
    if (Tape* tape = detail::active_tape(); tape != nullptr && result.requires_grad()) {
        auto xn = x.node();
        auto on = result.node();
        std::vector<std::array<double, 3>> centers(f);
        std::vector<double> inv_var(f);
        for (std::size_t j = 0; j < f; ++j) {
            centers[j] = parts[j].centers;
            inv_var[j] = 1.0 / (parts[j].sigma * parts[j].sigma);
        }
        tape->add_step(on, [xn, on, centers, inv_var, n, f]() {
            // d mu / dx = mu * (c - x) / sigma^2 for each Gaussian term.
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < f; ++j) {
                    const double xv = xn->values[i * f + j];
                    double acc = 0.0;
                    for (std::size_t t = 0; t < 3; ++t) {
                        const std::size_t o = i * 3 * f + 3 * j + t;
                        acc += on->grad[o] * on->values[o] * (centers[j][t] - xv) * inv_var[j];
                    }
                    xn->grad[i * f + j] += acc;
                }
            }
        });
    }
    return result;
}

std::vector<std::string> fuzzified_names(const std::vector<std::string>& base) {
    std::vector<std::string> out;
    out.reserve(base.size() * 3);
    for (const auto& b : base) {
        for (const char* term : kTermNames) out.push_back(b + "-" + term);
    }
    return out;
}

std::string partitions_to_json(const std::vector<FuzzyPartition>& parts) {
    json arr = json::array();
    for (const auto& p : parts) {
        arr.push_back({{"feature", p.feature},
                       {"min", p.min},
                       {"max", p.max},
                       {"centers", p.centers},
                       {"sigma", p.sigma},
                       {"degenerate", p.degenerate}});
    }
    return arr.dump();
}

std::vector<FuzzyPartition> partitions_from_json(const std::string& text) {
    json arr;
    try {
        arr = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("partition JSON: ") + e.what());
    }
    if (!arr.is_array()) throw FormatError("partition JSON: expected an array");
    std::vector<FuzzyPartition> parts;
    for (const auto& item : arr) {
        try {
            FuzzyPartition p;
            p.feature = item.at("feature").get<std::string>();
            p.min = item.at("min").get<double>();
            p.max = item.at("max").get<double>();
            const auto c = item.at("centers");
            if (!c.is_array() || c.size() != 3) {
                throw FormatError("partition JSON: centers must hold 3 values");
            }
            for (std::size_t t = 0; t < 3; ++t) p.centers[t] = c[t].get<double>();
            p.sigma = item.at("sigma").get<double>();
            p.degenerate = item.value("degenerate", false);
            if (p.sigma <= 0.0) throw FormatError("partition JSON: sigma must be positive");
            parts.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw FormatError(std::string("partition JSON: ") + e.what());
        }
    }
    return parts;
}

}  // namespace leakgnn
