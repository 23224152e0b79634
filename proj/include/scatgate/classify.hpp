#pragma once
/**
 * Lightweight realistic/fake classifiers.
 *
 * Logistic regression and k-nearest neighbours read (a slice of) the feature
 * vector, the physics rule reads the composite realism score, and External
 * replays probabilities computed elsewhere, looked up by image id.
 */

#include "scatgate/frame.hpp"
#include "scatgate/metrics.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scatgate::classify {

enum class ClassifierKind { Logistic, KNearest, PhysicsRule, External };

const char* to_string(ClassifierKind k) noexcept;
ClassifierKind parse_classifier_kind(const std::string& s);

struct LogisticParams {
    double learning_rate = 0.001;
    int batch_size = 32;
    int epochs = 100;
    double l2 = 1e-4;
};

struct ClassifierSpec {
    ClassifierKind kind = ClassifierKind::Logistic;
    std::string id;
    LogisticParams logistic;
    int k = 5;  // KNearest, odd
    std::string external_path;  // External: probability CSV
    // Feature columns [begin, begin + count); count 0 reads to the end.
    std::size_t slice_begin = 0;
    std::size_t slice_count = 0;

    void validate() const;
};

/// One item as seen by any classifier.
struct Sample {
    std::string id;
    std::vector<double> features;
    double physics = 0.0;  // composite realism score
};

struct LabeledSample {
    Sample sample;
    Verdict verdict = Verdict::Fake;
};

/// Stratified by verdict; the validation share of each class is round(fraction * n_class).
std::pair<std::vector<LabeledSample>, std::vector<LabeledSample>> split_train_validation(
    std::span<const LabeledSample> data, double fraction, std::uint64_t seed);

struct TrainedClassifier {
    ClassifierSpec spec;
    int round = 0;
    // Logistic
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> loss_history;  // mean training loss after each epoch
    // KNearest
    std::vector<std::vector<double>> points;
    std::vector<Verdict> point_labels;
    // PhysicsRule: P(realistic) = sigmoid(slope * composite + intercept)
    double slope = 0.0;
    double intercept = 0.0;
    // External
    std::map<std::string, ProbabilityVector> table;

    std::optional<metrics::ClassificationMetrics> validation;

    const std::string& id() const noexcept { return spec.id; }
};

/// Cross-entropy of sigmoid(w.x + b) against y (1 = Realistic), averaged, plus l2/2 |w|^2.
double logistic_loss(std::span<const double> w, double b, const std::vector<std::vector<double>>& x,
                     std::span<const double> y, double l2);
/// Gradient of logistic_loss: d/dw in the first w.size() entries, d/db last.
std::vector<double> logistic_gradient(std::span<const double> w, double b, const std::vector<std::vector<double>>& x,
                                      std::span<const double> y, double l2);

/**
 * Trains on `train`; validation metrics (threshold 0.5) are computed on
 * `validation` when it is non-empty. Logistic may warm-start from `warm`.
 */
TrainedClassifier train(const ClassifierSpec& spec, std::span<const LabeledSample> train,
                        std::span<const LabeledSample> validation, std::uint64_t seed,
                        const TrainedClassifier* warm = nullptr, int round = 0);

ProbabilityVector predict_proba(const TrainedClassifier& c, const Sample& s);
Verdict predict(const TrainedClassifier& c, const Sample& s, double threshold = 0.5);

metrics::ClassificationMetrics evaluate(const TrainedClassifier& c, std::span<const LabeledSample> data,
                                        double threshold = 0.5);

struct ExternalRow {
    std::string id;
    ProbabilityVector probs;
};

/// Reads "id,p_realistic,p_fake"; rows off by at most 1e-3 are renormalized.
std::vector<ExternalRow> ingest_external(const std::filesystem::path& path);
void write_probability_csv(std::span<const ExternalRow> rows, const std::filesystem::path& path);

inline constexpr int kModelFormatVersion = 1;

nlohmann::json to_json(const TrainedClassifier& c);
TrainedClassifier classifier_from_json(const nlohmann::json& j);
void save_model(const TrainedClassifier& c, const std::filesystem::path& path);
TrainedClassifier load_model(const std::filesystem::path& path);

nlohmann::json to_json(const ClassifierSpec& s);
ClassifierSpec spec_from_json(const nlohmann::json& j);

}  // namespace scatgate::classify
