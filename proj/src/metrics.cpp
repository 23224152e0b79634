#include "scatgate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace scatgate::metrics {

namespace {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), "empty feature set", ErrorKind::Insufficient);
    const auto d = static_cast<Eigen::Index>(rows.front().size());
    require(d > 0, "zero-length feature vectors");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(static_cast<Eigen::Index>(rows[i].size()) == d, "feature vectors have inconsistent lengths");
        for (Eigen::Index j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), j) = rows[i][j];
    }
    return m;
}

std::vector<std::vector<double>> rows_of(std::span<const FeatureVector> fv) {
    std::vector<std::vector<double>> rows;
    rows.reserve(fv.size());
    for (const auto& f : fv) rows.push_back(f.values);
    return rows;
}

// Symmetric PSD square root with negative eigenvalues clamped to zero.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (a + a.transpose()));
    require(eig.info() == Eigen::Success, "eigendecomposition failed", ErrorKind::Numerical);
    const Eigen::VectorXd s = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
}

MeanStd mean_std(const std::vector<double>& v) {
    MeanStd r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size()));
    return r;
}

// First m entries of a seeded partial Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> draw_subset(std::size_t n, std::size_t m, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(m);
    return idx;
}

double safe_div(double num, double den, bool& degenerate) {
    if (den == 0.0) {
        degenerate = true;
        return 0.0;
    }
    return num / den;
}

}  // namespace

GaussianMoments fit_moments(const std::vector<std::vector<double>>& rows) {
    require(rows.size() >= 2, "moment fit needs at least 2 vectors", ErrorKind::Insufficient);
    const Eigen::MatrixXd x = to_matrix(rows);
    GaussianMoments m;
    m.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - m.mean.transpose();
    const Eigen::MatrixXd c = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    m.covariance = 0.5 * (c + c.transpose());
    return m;
}

GaussianMoments fit_moments(std::span<const FeatureVector> features) { return fit_moments(rows_of(features)); }

FrechetResult frechet(const GaussianMoments& a, const GaussianMoments& b) {
    require(a.mean.size() == b.mean.size() && a.covariance.rows() == b.covariance.rows() &&
                a.covariance.rows() == a.mean.size() && b.covariance.cols() == b.mean.size(),
            "moment dimensions do not match");
    require(a.mean.allFinite() && b.mean.allFinite() && a.covariance.allFinite() && b.covariance.allFinite(),
            "non-finite moments", ErrorKind::Numerical);
    const Eigen::MatrixXd s1h = sqrt_psd(a.covariance);
    const Eigen::MatrixXd inner = s1h * b.covariance * s1h;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    require(eig.info() == Eigen::Success, "eigendecomposition failed", ErrorKind::Numerical);
    const double tr_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    FrechetResult r;
    r.raw = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_sqrt;
    r.value = std::max(r.raw, -1e-6);
    return r;
}

double polynomial_kernel(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size() && !x.empty(), "kernel inputs differ in length");
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
    const double base = dot / static_cast<double>(x.size()) + 1.0;
    return base * base * base;
}

double mmd2_unbiased(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
    require(x.size() >= 2 && y.size() >= 2, "MMD needs at least 2 samples per set", ErrorKind::Insufficient);
    auto within = [](const std::vector<std::vector<double>>& s) {
        double sum = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = i + 1; j < s.size(); ++j) sum += polynomial_kernel(s[i], s[j]);
        const double m = static_cast<double>(s.size());
        return 2.0 * sum / (m * (m - 1.0));
    };
    double cross = 0.0;
    for (const auto& xi : x)
        for (const auto& yj : y) cross += polynomial_kernel(xi, yj);
    return within(x) + within(y) - 2.0 * cross / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

MeanStd kid(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y, int subset_size,
            int n_subsets, std::uint64_t seed) {
    require(subset_size >= 2, "KID subset size must be at least 2");
    require(n_subsets >= 1, "KID needs at least one subset");
    require(static_cast<std::size_t>(subset_size) <= x.size() && static_cast<std::size_t>(subset_size) <= y.size(),
            "KID subset size " + std::to_string(subset_size) + " exceeds set size", ErrorKind::Insufficient);
    std::mt19937_64 rng(seed);
    std::vector<double> values;
    values.reserve(n_subsets);
    std::vector<std::vector<double>> xs(subset_size), ys(subset_size);
    for (int s = 0; s < n_subsets; ++s) {
        const auto ix = draw_subset(x.size(), subset_size, rng);
        const auto iy = draw_subset(y.size(), subset_size, rng);
        for (int i = 0; i < subset_size; ++i) {
            xs[i] = x[ix[i]];
            ys[i] = y[iy[i]];
        }
        values.push_back(mmd2_unbiased(xs, ys));
    }
    return mean_std(values);
}

MeanStd kid(std::span<const FeatureVector> x, std::span<const FeatureVector> y, int subset_size, int n_subsets,
            std::uint64_t seed) {
    return kid(rows_of(x), rows_of(y), subset_size, n_subsets, seed);
}

MeanStd inception_score(const std::vector<std::vector<double>>& probs, int n_splits, std::uint64_t seed) {
    require(n_splits >= 1, "IS needs at least one split");
    require(probs.size() >= static_cast<std::size_t>(n_splits),
            "IS needs at least as many rows as splits (zero-size split)", ErrorKind::Insufficient);
    const std::size_t c = probs.front().size();
    require(c >= 1, "empty probability rows");
    for (const auto& row : probs) {
        require(row.size() == c, "probability rows differ in class count");
        double sum = 0.0;
        for (double p : row) {
            require(std::isfinite(p) && p >= 0.0, "probabilities must be finite and non-negative");
            sum += p;
        }
        require(std::abs(sum - 1.0) <= 1e-6, "probability row does not sum to 1");
    }

    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<double> scores;
    const std::size_t n = probs.size(), base = n / n_splits, extra = n % n_splits;
    std::size_t start = 0;
    for (int s = 0; s < n_splits; ++s) {
        const std::size_t len = base + (static_cast<std::size_t>(s) < extra ? 1 : 0);
        std::vector<double> marginal(c, 0.0);
        for (std::size_t i = start; i < start + len; ++i)
            for (std::size_t k = 0; k < c; ++k) marginal[k] += probs[order[i]][k];
        for (auto& m : marginal) m /= static_cast<double>(len);
        double kl_sum = 0.0;
        for (std::size_t i = start; i < start + len; ++i)
            for (std::size_t k = 0; k < c; ++k) {
                const double p = probs[order[i]][k];
                if (p > 0.0) kl_sum += p * (std::log(p) - std::log(marginal[k]));
            }
        scores.push_back(std::exp(kl_sum / static_cast<double>(len)));
        start += len;
    }
    return mean_std(scores);
}

MeanStd inception_score(std::span<const ProbabilityVector> probs, int n_splits, std::uint64_t seed) {
    std::vector<std::vector<double>> rows;
    rows.reserve(probs.size());
    for (const auto& p : probs) rows.push_back({p.p_realistic(), p.p_fake()});
    return inception_score(rows, n_splits, seed);
}

ConfusionCounts confusion(std::span<const Verdict> predicted, std::span<const Verdict> truth) {
    require(predicted.size() == truth.size(), "prediction and label counts differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool p = predicted[i] == Verdict::Realistic, t = truth[i] == Verdict::Realistic;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

ClassificationMetrics classification_report(const ConfusionCounts& c) {
    require(c.tp >= 0 && c.fp >= 0 && c.fn >= 0 && c.tn >= 0, "confusion counts must be non-negative");
    ClassificationMetrics m;
    m.accuracy = safe_div(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()), m.degenerate);
    m.precision = safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp), m.degenerate);
    m.recall = safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn), m.degenerate);
    m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall, m.degenerate);
    return m;
}

double f1_score(double precision, double recall) {
    return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

double roc_auc(std::span<const double> scores, std::span<const bool> positive) {
    require(scores.size() == positive.size(), "score and label counts differ");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U with mid-ranks for ties.
    double rank_sum = 0.0;
    long n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j + 1);
        for (std::size_t k = i; k < j; ++k)
            if (positive[order[k]]) {
                rank_sum += mid;
                ++n_pos;
            }
        i = j;
    }
    const long n_neg = static_cast<long>(scores.size()) - n_pos;
    require(n_pos > 0 && n_neg > 0, "AUC needs both classes", ErrorKind::Insufficient);
    return (rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

nlohmann::json to_json(const ConfusionCounts& c) {
    return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

nlohmann::json to_json(const ClassificationMetrics& m) {
    return {{"accuracy", m.accuracy},
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"degenerate", m.degenerate}};
}

MetricReport metric_report(std::span<const FeatureVector> real, std::span<const FeatureVector> generated,
                           const std::vector<std::vector<double>>* probs, const MetricConfig& config) {
    require(!real.empty() && !generated.empty(), "metric report needs both feature sets", ErrorKind::Insufficient);
    MetricReport r;
    r.n_real = real.size();
    r.n_generated = generated.size();
    r.extractor_id = real.front().extractor_id;
    const auto fr = frechet(fit_moments(real), fit_moments(generated));
    r.fid = fr.value;
    r.fid_raw = fr.raw;
    const int m = config.subset_size.value_or(static_cast<int>(std::min<std::size_t>({100, real.size(), generated.size()})));
    const auto k = kid(real, generated, m, config.n_subsets, config.seed);
    r.kid_mean = k.mean;
    r.kid_std = k.std;
    if (probs) {
        const auto is = inception_score(*probs, config.n_splits, config.seed);
        r.is_mean = is.mean;
        r.is_std = is.std;
    }
    return r;
}

nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json j{{"fid", r.fid},
                     {"fid_raw", r.fid_raw},
                     {"kid_mean", r.kid_mean},
                     {"kid_std", r.kid_std},
                     {"n_real", r.n_real},
                     {"n_generated", r.n_generated},
                     {"extractor_id", r.extractor_id}};
    j["is_mean"] = r.is_mean ? nlohmann::json(*r.is_mean) : nlohmann::json(nullptr);
    j["is_std"] = r.is_std ? nlohmann::json(*r.is_std) : nlohmann::json(nullptr);
    return j;
}

}  // namespace scatgate::metrics
