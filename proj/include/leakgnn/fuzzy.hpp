#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "leakgnn/tensor.hpp"

namespace leakgnn {

inline constexpr std::array<const char*, 3> kTermNames = {"Low", "Medium", "High"};

// Gaussian three-set partition of one feature's observed range.  Centers sit
// at {min, mid, max}; sigma is chosen so adjacent sets cross at exactly 0.5
// membership (sigma = half_range / (2 sqrt(2 ln 2))).
struct FuzzyPartition {
    std::string feature;
    double min = 0.0;
    double max = 1.0;
    std::array<double, 3> centers{0.0, 0.5, 1.0};  // Low, Medium, High
    double sigma = 1.0;
    bool degenerate = false;  // range collapsed; widened to a unit span
};

// Builds the partition for an observed [lo, hi] range.  A collapsed range
// (hi - lo below 1e-12) is widened by 0.5 on each side and flagged.
FuzzyPartition build_partition(const std::string& feature, double lo, double hi);

// Membership of x in one term (0 = Low, 1 = Medium, 2 = High).
double membership(const FuzzyPartition& p, std::size_t term, double x);
std::array<double, 3> memberships(const FuzzyPartition& p, double x);

// Verifies the four partition properties on an inclusive uniform probe grid:
// each set reaches membership 1 at its center (normality), each restricted
// membership curve is unimodal (convexity), every probe is covered by some
// set at >= 0.5 (coverage), and pairwise discrete Jaccard overlap stays
// <= 0.5 (distinguishability).  Comparisons carry a 1e-9 slack because the
// crossing points sit exactly at the 0.5 boundary.
struct ConstraintReport {
    bool normality = false;
    bool convexity = false;
    bool coverage = false;
    bool distinguishability = false;
    double min_coverage = 0.0;  // min over probes of the best membership
    double max_overlap = 0.0;   // largest pairwise Jaccard
    bool ok() const { return normality && convexity && coverage && distinguishability; }
};

ConstraintReport check_constraints(const FuzzyPartition& p, std::size_t probes = 1000);

// One partition per feature column, ranges taken over all rows of all mats.
std::vector<FuzzyPartition> build_partitions(const std::vector<Tensor>& mats,
                                             const std::vector<std::string>& names);

// Maps x [N,F] to memberships [N,3F], columns grouped per feature as
// (Low, Medium, High).  Differentiable: gradients flow back to x when a
// tape is active.
Tensor fuzzify(const Tensor& x, const std::vector<FuzzyPartition>& parts);

// "Pressure-mean" -> "Pressure-mean-Low", ... in fuzzify column order.
std::vector<std::string> fuzzified_names(const std::vector<std::string>& base);

std::string partitions_to_json(const std::vector<FuzzyPartition>& parts);
std::vector<FuzzyPartition> partitions_from_json(const std::string& text);

}  // namespace leakgnn
