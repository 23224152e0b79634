#include "scatgate/ensemble.hpp"

#include <algorithm>
#include <cmath>

namespace scatgate::ensemble {

namespace {

double validation_precision(const PredictionPanel& panel, std::span<const double> weights,
                            std::span<const Verdict> labels, double threshold) {
    const VoteConfig cfg{Strategy::SoftWeighted, {weights.begin(), weights.end()}, threshold, Verdict::Fake};
    std::vector<Verdict> pred;
    for (const auto& d : combine_all(panel, cfg)) pred.push_back(d.verdict);
    return metrics::classification_report(metrics::confusion(pred, labels)).precision;
}

std::vector<double> normalized(std::vector<double> w) {
    double sum = 0.0;
    for (double v : w) sum += v;
    for (auto& v : w) v /= sum;
    return w;
}

}  // namespace

const char* to_string(Strategy s) noexcept {
    switch (s) {
        case Strategy::Hard: return "hard";
        case Strategy::SoftAverage: return "soft-average";
        case Strategy::SoftWeighted: return "soft-weighted";
    }
    return "?";
}

Strategy parse_strategy(const std::string& s) {
    if (s == "hard") return Strategy::Hard;
    if (s == "soft-average" || s == "soft") return Strategy::SoftAverage;
    if (s == "soft-weighted" || s == "weighted") return Strategy::SoftWeighted;
    fail(ErrorKind::InvalidArgument, "unknown voting strategy: " + s);
}

void VoteConfig::validate(std::size_t n_classifiers) const {
    require(n_classifiers >= 1, "voting needs at least one classifier");
    require(threshold >= 0.0 && threshold <= 1.0, "decision threshold must lie in [0,1]");
    if (strategy != Strategy::SoftWeighted) return;
    require(weights.size() == n_classifiers, "expected " + std::to_string(n_classifiers) + " weights, got " +
                                                 std::to_string(weights.size()));
    double sum = 0.0;
    for (double w : weights) {
        require(std::isfinite(w) && w >= 0.0, "voting weights must be non-negative");
        sum += w;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "voting weights must sum to 1");
}

Verdict hard_vote(std::span<const Verdict> votes, Verdict tie_break) {
    require(!votes.empty(), "hard vote needs at least one prediction");
    const auto real = std::count(votes.begin(), votes.end(), Verdict::Realistic);
    const auto fake = static_cast<long>(votes.size()) - real;
    if (real == fake) return tie_break;
    return real > fake ? Verdict::Realistic : Verdict::Fake;
}

Decision soft_vote(std::span<const ProbabilityVector> probs, std::span<const double> weights, double threshold) {
    require(!probs.empty(), "soft vote needs at least one prediction");
    require(weights.empty() || weights.size() == probs.size(),
            "weight count " + std::to_string(weights.size()) + " does not match " + std::to_string(probs.size()) +
                " predictions");
    if (!weights.empty()) {
        double sum = 0.0;
        for (double w : weights) {
            require(std::isfinite(w) && w >= 0.0, "voting weights must be non-negative");
            sum += w;
        }
        require(std::abs(sum - 1.0) <= 1e-9, "voting weights must sum to 1");
    }
    // The uniform case uses the same w_i * p_i sum so both paths agree bit for bit.
    const double uniform = 1.0 / static_cast<double>(probs.size());
    double p = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) p += (weights.empty() ? uniform : weights[i]) * probs[i].p_realistic();
    p = std::clamp(p, 0.0, 1.0);
    return {p >= threshold ? Verdict::Realistic : Verdict::Fake, p};
}

Decision combine(std::span<const ProbabilityVector> probs, const VoteConfig& config) {
    config.validate(probs.size());
    switch (config.strategy) {
        case Strategy::Hard: {
            std::vector<Verdict> votes;
            votes.reserve(probs.size());
            for (const auto& p : probs)
                votes.push_back(p.p_realistic() >= config.threshold ? Verdict::Realistic : Verdict::Fake);
            const auto real = std::count(votes.begin(), votes.end(), Verdict::Realistic);
            return {hard_vote(votes, config.tie_break), static_cast<double>(real) / static_cast<double>(votes.size())};
        }
        case Strategy::SoftAverage: return soft_vote(probs, {}, config.threshold);
        case Strategy::SoftWeighted: return soft_vote(probs, config.weights, config.threshold);
    }
    fail(ErrorKind::InvalidArgument, "unknown voting strategy");
}

std::vector<Decision> combine_all(const PredictionPanel& predictions, const VoteConfig& config) {
    require(!predictions.empty(), "no classifier predictions");
    const std::size_t n = predictions.front().size();
    for (const auto& row : predictions) require(row.size() == n, "classifiers predicted different item counts");
    config.validate(predictions.size());
    std::vector<Decision> out;
    out.reserve(n);
    std::vector<ProbabilityVector> item(predictions.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < predictions.size(); ++c) item[c] = predictions[c][i];
        out.push_back(combine(item, config));
    }
    return out;
}

WeightFit fit_weights(const PredictionPanel& validation, std::span<const Verdict> labels, double threshold,
                      double step) {
    require(validation.size() >= 2, "weight fitting needs at least 2 classifiers", ErrorKind::Insufficient);
    require(step > 0.0, "refinement step must be positive");
    for (const auto& row : validation)
        require(row.size() == labels.size(), "prediction count does not match label count");
    WeightFit fit;
    const auto real = std::count(labels.begin(), labels.end(), Verdict::Realistic);
    if (2 * real != static_cast<long>(labels.size()))
        fit.warnings.emplace_back("validation labels are not balanced (" + std::to_string(real) + " realistic of " +
                                  std::to_string(labels.size()) + ")");

    bool any_informative = false;
    for (const auto& row : validation) {
        std::vector<Verdict> pred;
        for (const auto& p : row) pred.push_back(p.p_realistic() >= threshold ? Verdict::Realistic : Verdict::Fake);
        const double prec = metrics::classification_report(metrics::confusion(pred, labels)).precision;
        any_informative = any_informative || prec > 0.5;
        const double m = std::max(prec - 0.5, 1e-3);
        fit.initial.push_back(m * m);
    }
    if (!any_informative) {
        fit.warnings.emplace_back("no classifier exceeds 0.5 validation precision; using uniform weights");
        fit.initial.assign(validation.size(), 1.0);
    }
    fit.initial = normalized(fit.initial);
    fit.weights = fit.initial;
    fit.precision = validation_precision(validation, fit.weights, labels, threshold);
    if (!any_informative) return fit;

    for (int pass = 0; pass < 100; ++pass) {
        bool improved = false;
        for (std::size_t i = 0; i < fit.weights.size(); ++i)
            for (double delta : {step, -step}) {
                auto trial = fit.weights;
                trial[i] = std::max(0.0, trial[i] + delta);
                double sum = 0.0;
                for (double v : trial) sum += v;
                if (sum <= 0.0) continue;
                trial = normalized(trial);
                const double prec = validation_precision(validation, trial, labels, threshold);
                if (prec > fit.precision) {
                    fit.precision = prec;
                    fit.weights = trial;
                    improved = true;
                }
            }
        if (!improved) break;
    }
    return fit;
}

const ReportRow* EnsembleReport::find(const std::string& name) const {
    for (const auto& r : rows)
        if (r.name == name) return &r;
    return nullptr;
}

EnsembleReport evaluate_grid(std::span<const std::string> classifier_names, const PredictionPanel& predictions,
                             std::span<const NamedStrategy> strategies, std::span<const Verdict> labels, int round) {
    require(classifier_names.size() == predictions.size(), "classifier names and predictions differ in count");
    EnsembleReport report;
    report.round = round;
    auto add_row = [&](const std::string& name, bool is_strategy, const std::vector<Verdict>& pred) {
        ReportRow row{name, is_strategy, metrics::confusion(pred, labels), {}};
        row.metrics = metrics::classification_report(row.counts);
        report.rows.push_back(row);
    };
    for (std::size_t c = 0; c < predictions.size(); ++c) {
        require(predictions[c].size() == labels.size(), "prediction count does not match label count");
        std::vector<Verdict> pred;
        for (const auto& p : predictions[c]) pred.push_back(p.p_realistic() >= 0.5 ? Verdict::Realistic : Verdict::Fake);
        add_row(classifier_names[c], false, pred);
    }
    for (const auto& s : strategies) {
        std::vector<Verdict> pred;
        for (const auto& d : combine_all(predictions, s.config)) pred.push_back(d.verdict);
        add_row(s.name, true, pred);
    }
    return report;
}

std::vector<NamedStrategy> standard_strategies(std::vector<double> weights, double threshold) {
    return {{"hard", {Strategy::Hard, {}, threshold, Verdict::Fake}},
            {"soft-average", {Strategy::SoftAverage, {}, threshold, Verdict::Fake}},
            {"soft-weighted", {Strategy::SoftWeighted, std::move(weights), threshold, Verdict::Fake}}};
}

nlohmann::json to_json(const EnsembleReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"name", row.name},
                        {"kind", row.is_strategy ? "strategy" : "classifier"},
                        {"counts", metrics::to_json(row.counts)},
                        {"metrics", metrics::to_json(row.metrics)}});
    return {{"round", r.round}, {"rows", rows}};
}

EnsembleReport ensemble_report_from_json(const nlohmann::json& j) {
    EnsembleReport r;
    try {
        r.round = j.at("round").get<int>();
        for (const auto& row : j.at("rows")) {
            ReportRow out;
            out.name = row.at("name").get<std::string>();
            out.is_strategy = row.at("kind").get<std::string>() == "strategy";
            const auto& c = row.at("counts");
            out.counts = {c.at("tp").get<long>(), c.at("fp").get<long>(), c.at("fn").get<long>(), c.at("tn").get<long>()};
            const auto& m = row.at("metrics");
            out.metrics = {m.at("accuracy").get<double>(), m.at("precision").get<double>(), m.at("recall").get<double>(),
                           m.at("f1").get<double>(), m.value("degenerate", false)};
            r.rows.push_back(out);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("malformed ensemble report: ") + e.what());
    }
    return r;
}

}  // namespace scatgate::ensemble
