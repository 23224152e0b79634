#pragma once
// Hard, average-soft and weighted-soft voting over per-classifier predictions.

#include "scatgate/frame.hpp"
#include "scatgate/metrics.hpp"

#include "json.hpp"

#include <span>
#include <string>
#include <vector>

namespace scatgate::ensemble {

enum class Strategy { Hard, SoftAverage, SoftWeighted };

const char* to_string(Strategy s) noexcept;
Strategy parse_strategy(const std::string& s);  // hard | soft-average | soft-weighted

struct VoteConfig {
    Strategy strategy = Strategy::SoftAverage;
    std::vector<double> weights;  // SoftWeighted only
    double threshold = 0.5;       // on p_realistic
    Verdict tie_break = Verdict::Fake;

    void validate(std::size_t n_classifiers) const;
};

/// Majority label; an exact tie resolves to `tie_break`.
Verdict hard_vote(std::span<const Verdict> votes, Verdict tie_break = Verdict::Fake);

struct Decision {
    Verdict verdict = Verdict::Fake;
    double p_realistic = 0.0;  // combined probability (vote share for Hard)
};

/// Combined p = sum w_i p_i (uniform when `weights` is empty); Realistic iff p >= threshold.
Decision soft_vote(std::span<const ProbabilityVector> probs, std::span<const double> weights = {},
                   double threshold = 0.5);

/// Applies `config` to one item's predictions. Hard voting thresholds each
/// classifier at config.threshold first.
Decision combine(std::span<const ProbabilityVector> probs, const VoteConfig& config);

/// predictions[c][i]: classifier c on item i.
using PredictionPanel = std::vector<std::vector<ProbabilityVector>>;

std::vector<Decision> combine_all(const PredictionPanel& predictions, const VoteConfig& config);

struct WeightFit {
    std::vector<double> weights;
    std::vector<double> initial;  // precision-squared prior before refinement
    double precision = 0.0;       // validation precision of the final weights
    std::vector<std::string> warnings;
};

/**
 * w_i proportional to max(precision_i - 0.5, 1e-3)^2, then greedy coordinate
 * moves of +-step that are kept only when validation precision improves.
 */
WeightFit fit_weights(const PredictionPanel& validation, std::span<const Verdict> labels, double threshold = 0.5,
                      double step = 0.05);

struct ReportRow {
    std::string name;
    bool is_strategy = false;
    metrics::ConfusionCounts counts;
    metrics::ClassificationMetrics metrics;
};

struct EnsembleReport {
    int round = 0;
    std::vector<ReportRow> rows;

    const ReportRow* find(const std::string& name) const;
};

struct NamedStrategy {
    std::string name;
    VoteConfig config;
};

/// One row per classifier (thresholded at 0.5) and one per strategy.
EnsembleReport evaluate_grid(std::span<const std::string> classifier_names, const PredictionPanel& predictions,
                             std::span<const NamedStrategy> strategies, std::span<const Verdict> labels, int round = 0);

/// The three standard strategies; `weights` feeds the weighted one.
std::vector<NamedStrategy> standard_strategies(std::vector<double> weights, double threshold = 0.5);

nlohmann::json to_json(const EnsembleReport& r);
EnsembleReport ensemble_report_from_json(const nlohmann::json& j);

}  // namespace scatgate::ensemble
