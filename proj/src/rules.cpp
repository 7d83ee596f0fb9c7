#include "leakgnn/rules.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "leakgnn/errors.hpp"
#include "leakgnn/fuzzy.hpp"

using nlohmann::json;

namespace leakgnn {

namespace {

std::size_t term_index(const std::string& name) {
    for (std::size_t t = 0; t < kTermNames.size(); ++t) {
        if (name == kTermNames[t]) return t;
    }
    throw FormatError("unknown linguistic term '" + name + "'");
}

std::size_t feature_index(const std::string& name,
                          const std::vector<std::string>& features) {
    for (std::size_t f = 0; f < features.size(); ++f) {
        if (features[f] == name) return f;
    }
    throw ValidationError("unknown feature '" + name + "'");
}

}  // namespace

std::optional<FuzzyRule> extract_rule(const Subgraph& sub, const ExplanationMask& mask,
                                      const WdnGraph& g, const Tensor& memberships,
                                      const std::vector<std::string>& underlying_features,
                                      double probability, std::size_t max_antecedents) {
    if (max_antecedents == 0) throw ConfigError("extract_rule: need at least one antecedent");
    if (!(probability >= 0.0 && probability <= 1.0)) {
        throw DomainError("extract_rule: probability " + std::to_string(probability) +
                          " outside [0,1]");
    }
    const std::size_t n_features = underlying_features.size();
    if (mask.feature_mask.size() != 3 * n_features) {
        throw ShapeError("extract_rule: feature mask has " +
                         std::to_string(mask.feature_mask.size()) + " columns, expected 3 x " +
                         std::to_string(n_features));
    }
    if (memberships.ndim() != 2 || memberships.rows() != g.num_nodes ||
        memberships.cols() != 3 * n_features) {
        throw ShapeError("extract_rule: memberships must be [num_nodes, 3 x features]");
    }
    if (sub.empty) return std::nullopt;

    // The highest-masked input column decides the underlying feature every
    // antecedent conditions on.
    const std::vector<std::size_t> ranked = rank_features(mask);
    const std::size_t top_feature = ranked.front() / 3;

    // Subgraph nodes ranked by their best mask-weighted membership.
    std::vector<std::size_t> nodes = sub.nodes;
    auto node_score = [&](std::size_t v) {
        double best = 0.0;
        for (std::size_t c = 0; c < mask.feature_mask.size(); ++c) {
            best = std::max(best, mask.feature_mask[c] * memberships.at(v, c));
        }
        return best;
    };
    std::stable_sort(nodes.begin(), nodes.end(), [&](std::size_t a, std::size_t b) {
        return node_score(a) > node_score(b);
    });
    if (nodes.size() > max_antecedents) nodes.resize(max_antecedents);

    FuzzyRule rule;
    rule.network_target = mask.target.graph_level;
    if (!rule.network_target) rule.target_label = g.node_ids[mask.target.node];
    rule.probability = probability;
    rule.firing_strength = 1.0;
    for (std::size_t v : nodes) {
        std::size_t term = 0;
        double degree = memberships.at(v, top_feature * 3);
        for (std::size_t t = 1; t < 3; ++t) {
            const double d = memberships.at(v, top_feature * 3 + t);
            if (d > degree) {  // strict: ties keep the lower term
                degree = d;
                term = t;
            }
        }
        rule.antecedents.push_back(
            {v, g.node_ids[v], underlying_features[top_feature], term, degree});
        rule.firing_strength = std::min(rule.firing_strength, degree);
    }
    return rule;
}

std::string render_rule(const FuzzyRule& rule) {
    if (rule.antecedents.empty()) {
        throw ValidationError("render_rule: a rule needs at least one antecedent");
    }
    std::string text = "IF ";
    for (std::size_t i = 0; i < rule.antecedents.size(); ++i) {
        const Antecedent& a = rule.antecedents[i];
        if (i > 0) text += " AND ";
        text += a.feature + " at Node " + a.node_label + " is " + kTermNames[a.term];
    }
    const long pct = std::lround(rule.probability * 100.0);
    text += " THEN Leak probability";
    if (!rule.network_target) text += " at Node " + rule.target_label;
    text += " is " + std::to_string(pct) + "%.";
    return text;
}

FuzzyRule parse_rule(const std::string& text) {
    const auto fail = [&](const std::string& why) {
        throw FormatError("parse_rule: " + why + " in \"" + text + "\"");
    };
    if (text.rfind("IF ", 0) != 0) fail("missing IF");
    const std::size_t then_pos = text.find(" THEN Leak probability");
    if (then_pos == std::string::npos) fail("missing THEN clause");

    FuzzyRule rule;
    std::string clause = text.substr(3, then_pos - 3);
    std::size_t start = 0;
    while (true) {
        const std::size_t next = clause.find(" AND ", start);
        const std::string part = clause.substr(
            start, next == std::string::npos ? std::string::npos : next - start);
        const std::size_t at = part.find(" at Node ");
        if (at == std::string::npos) fail("antecedent missing node clause");
        const std::size_t is = part.find(" is ", at);
        if (is == std::string::npos) fail("antecedent missing term");
        Antecedent a;
        a.feature = part.substr(0, at);
        a.node_label = part.substr(at + 9, is - at - 9);
        a.term = term_index(part.substr(is + 4));
        rule.antecedents.push_back(std::move(a));
        if (next == std::string::npos) break;
        start = next + 5;
    }

    std::string tail = text.substr(then_pos + 22);  // after "... Leak probability"
    if (tail.rfind(" at Node ", 0) == 0) {
        const std::size_t is = tail.find(" is ", 9);
        if (is == std::string::npos) fail("consequent missing probability");
        rule.network_target = false;
        rule.target_label = tail.substr(9, is - 9);
        tail = tail.substr(is);
    }
    if (tail.rfind(" is ", 0) != 0 || tail.back() != '.') fail("malformed probability");
    const std::string pct = tail.substr(4, tail.size() - 6);
    if (pct.empty() || tail[tail.size() - 2] != '%') fail("malformed probability");
    std::size_t consumed = 0;
    const long value = std::stol(pct, &consumed);
    if (consumed != pct.size() || value < 0 || value > 100) fail("probability out of range");
    rule.probability = static_cast<double>(value) / 100.0;
    return rule;
}

double firing_strength_on(const FuzzyRule& rule, const Tensor& memberships,
                          const std::vector<std::string>& underlying_features) {
    if (rule.antecedents.empty()) {
        throw ValidationError("firing_strength_on: rule has no antecedents");
    }
    if (memberships.ndim() != 2 || memberships.cols() != 3 * underlying_features.size()) {
        throw ShapeError("firing_strength_on: memberships must be [nodes, 3 x features]");
    }
    double strength = 1.0;
    for (const Antecedent& a : rule.antecedents) {
        if (a.node >= memberships.rows()) {
            throw IndexError("firing_strength_on: node " + std::to_string(a.node) +
                             " outside the membership rows");
        }
        const std::size_t f = feature_index(a.feature, underlying_features);
        strength = std::min(strength, memberships.at(a.node, f * 3 + a.term));
    }
    return strength;
}

std::optional<double> rule_fidelity(const std::vector<double>& firing,
                                    const std::vector<double>& probabilities) {
    if (firing.size() != probabilities.size()) {
        throw ShapeError("rule_fidelity: " + std::to_string(firing.size()) +
                         " firing strengths vs " + std::to_string(probabilities.size()) +
                         " probabilities");
    }
    if (firing.size() < 10) {
        throw ConfigError("rule_fidelity: needs at least 10 samples, got " +
                          std::to_string(firing.size()));
    }
    const auto constant = [](const std::vector<double>& xs) {
        return std::all_of(xs.begin(), xs.end(), [&](double v) { return v == xs.front(); });
    };
    if (constant(firing) || constant(probabilities)) return std::nullopt;
    const double n = static_cast<double>(firing.size());
    const double mx = std::accumulate(firing.begin(), firing.end(), 0.0) / n;
    const double my = std::accumulate(probabilities.begin(), probabilities.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < firing.size(); ++i) {
        const double dx = firing[i] - mx, dy = probabilities[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

std::string rule_to_json(const FuzzyRule& rule, int indent) {
    json j;
    j["target"] = rule.network_target ? "network" : rule.target_label;
    j["probability"] = rule.probability;
    j["firing_strength"] = rule.firing_strength;
    json ants = json::array();
    for (const Antecedent& a : rule.antecedents) {
        ants.push_back({{"node", a.node_label},
                        {"feature", a.feature},
                        {"term", kTermNames[a.term]},
                        {"degree", a.degree}});
    }
    j["antecedents"] = std::move(ants);
    j["text"] = render_rule(rule);
    return j.dump(indent);
}

}  // namespace leakgnn
