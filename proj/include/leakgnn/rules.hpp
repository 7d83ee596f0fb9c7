#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "leakgnn/explain.hpp"
#include "leakgnn/graph.hpp"
#include "leakgnn/tensor.hpp"

namespace leakgnn {

struct Antecedent {
    std::size_t node = 0;     // internal index
    std::string node_label;   // external id used when rendering
    std::string feature;      // underlying feature name
    std::size_t term = 0;     // 0 Low, 1 Medium, 2 High
    double degree = 0.0;      // membership at extraction time
};

// IF <antecedents joined by AND> THEN leak probability at the target.
// The consequent probability is the model's sigmoid output verbatim; the
// firing strength is the min t-norm over antecedent degrees.
struct FuzzyRule {
    std::vector<Antecedent> antecedents;
    bool network_target = true;
    std::string target_label;  // node label when network_target is false
    double probability = 0.0;
    double firing_strength = 0.0;
};

// Builds a rule from an explanation: subgraph nodes are ordered by their
// best mask-weighted membership and capped at max_antecedents; every kept
// node contributes one antecedent on the top-masked underlying feature,
// using its argmax term (ties resolve Low < Medium < High).  `memberships`
// is the fuzzified input [num_nodes, 3 * underlying count]; `mask` supplies
// the per-column feature attribution.  An empty subgraph yields nullopt
// rather than a fabricated rule.
std::optional<FuzzyRule> extract_rule(const Subgraph& sub, const ExplanationMask& mask,
                                      const WdnGraph& g, const Tensor& memberships,
                                      const std::vector<std::string>& underlying_features,
                                      double probability, std::size_t max_antecedents = 4);

// Exact template, e.g.
//   IF Pressure-mean at Node 1 is High AND Pressure-mean at Node 3 is Low
//   THEN Leak probability at Node 5 is 70%.
// Network-level consequents omit the "at Node <id>" clause.
std::string render_rule(const FuzzyRule& rule);

// Inverse of render_rule: recovers the antecedent list (labels, features,
// terms), the target, and the rendered probability.  Degrees and the firing
// strength are not part of the text and come back as zero.
FuzzyRule parse_rule(const std::string& text);

// Firing strength of the rule on another sample's fuzzified features.
double firing_strength_on(const FuzzyRule& rule, const Tensor& memberships,
                          const std::vector<std::string>& underlying_features);

// Pearson correlation between per-sample firing strengths and predicted
// probabilities; needs at least 10 pairs, nullopt when either side has zero
// variance.
std::optional<double> rule_fidelity(const std::vector<double>& firing,
                                    const std::vector<double>& probabilities);

// {target, probability, firing_strength, antecedents, text}.
std::string rule_to_json(const FuzzyRule& rule, int indent = 2);

}  // namespace leakgnn
