#pragma once
/**
 * Distribution metrics over feature sets (FID, KID, IS) and the
 * confusion-matrix classification report.
 */

#include "scatgate/frame.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scatgate::metrics {

struct GaussianMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

/// Sample mean and unbiased covariance, symmetrized.
GaussianMoments fit_moments(std::span<const FeatureVector> features);
GaussianMoments fit_moments(const std::vector<std::vector<double>>& rows);

struct FrechetResult {
    double value = 0.0;  // clamped to >= -1e-6
    double raw = 0.0;
};

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), the square root taken
/// through the symmetric product S1^(1/2) S2 S1^(1/2).
FrechetResult frechet(const GaussianMoments& a, const GaussianMoments& b);
inline double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) { return frechet(a, b).value; }

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population std over subsets/splits
};

/// k(x, y) = (x.y / d + 1)^3
double polynomial_kernel(std::span<const double> x, std::span<const double> y);

/// Unbiased MMD^2 between two sets with the cubic polynomial kernel.
double mmd2_unbiased(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y);

/// Mean and std of the unbiased MMD^2 over `n_subsets` seeded subset pairs of size m.
MeanStd kid(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y, int subset_size,
            int n_subsets, std::uint64_t seed);
MeanStd kid(std::span<const FeatureVector> x, std::span<const FeatureVector> y, int subset_size, int n_subsets,
            std::uint64_t seed);

/// Rows are class distributions over C >= 2 classes. Rows are shuffled with
/// `seed` and cut into `n_splits` contiguous groups; IS per group is
/// exp(mean KL(row || group marginal)).
MeanStd inception_score(const std::vector<std::vector<double>>& probs, int n_splits, std::uint64_t seed);
MeanStd inception_score(std::span<const ProbabilityVector> probs, int n_splits, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Classification

/// Positive class = Realistic.
struct ConfusionCounts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long tn = 0;

    long total() const noexcept { return tp + fp + fn + tn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion(std::span<const Verdict> predicted, std::span<const Verdict> truth);

struct ClassificationMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool degenerate = false;  // some ratio had a zero denominator and reads 0
};

ClassificationMetrics classification_report(const ConfusionCounts& counts);
double f1_score(double precision, double recall);

/// Area under the ROC curve of `scores` for positive labels `positive` (ties count half).
double roc_auc(std::span<const double> scores, std::span<const bool> positive);

nlohmann::json to_json(const ConfusionCounts& c);
nlohmann::json to_json(const ClassificationMetrics& m);

// ---------------------------------------------------------------------------

struct MetricConfig {
    std::optional<int> subset_size;  // default min(100, smaller set)
    int n_subsets = 50;
    int n_splits = 10;
    std::uint64_t seed = 0;
};

struct MetricReport {
    double fid = 0.0;
    double fid_raw = 0.0;
    double kid_mean = 0.0;
    double kid_std = 0.0;
    std::optional<double> is_mean;
    std::optional<double> is_std;
    std::size_t n_real = 0;
    std::size_t n_generated = 0;
    std::string extractor_id;
};

MetricReport metric_report(std::span<const FeatureVector> real, std::span<const FeatureVector> generated,
                           const std::vector<std::vector<double>>* probs = nullptr, const MetricConfig& config = {});

nlohmann::json to_json(const MetricReport& r);

}  // namespace scatgate::metrics
