#include "doctest.h"

#include "scatgate/metrics.hpp"

#include <cmath>
#include <memory>
#include <random>

using namespace scatgate;
using namespace scatgate::metrics;

namespace {

GaussianMoments moments(std::vector<double> mean, const Eigen::MatrixXd& cov) {
    GaussianMoments m;
    m.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    m.covariance = cov;
    return m;
}

std::vector<std::vector<double>> normal_rows(int n, int d, std::uint64_t seed, double shift = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    for (auto& r : rows)
        for (auto& v : r) v = z(rng) + shift;
    return rows;
}

std::vector<FeatureVector> as_features(const std::vector<std::vector<double>>& rows) {
    std::vector<FeatureVector> out;
    for (const auto& r : rows) out.push_back({r, "test"});
    return out;
}

}  // namespace

TEST_CASE("moments") {
    const auto m = fit_moments(std::vector<std::vector<double>>{{-1.0, 2.0}, {1.0, -2.0}});
    CHECK(m.mean.norm() == 0.0);
    // two-point unbiased covariance is 2 a a^T
    CHECK(m.covariance(0, 0) == doctest::Approx(2.0));
    CHECK(m.covariance(0, 1) == doctest::Approx(-4.0));
    CHECK(m.covariance(1, 1) == doctest::Approx(8.0));

    auto rows = normal_rows(10000, 3, 1);
    const auto s = fit_moments(rows);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(s.mean(i)) <= 0.05);
        for (int j = 0; j < 3; ++j) CHECK(std::abs(s.covariance(i, j) - (i == j ? 1.0 : 0.0)) <= 0.1);
    }
    auto doubled = rows;
    doubled.insert(doubled.end(), rows.begin(), rows.end());
    const auto d = fit_moments(doubled);
    for (int i = 0; i < 3; ++i) CHECK(d.mean(i) == doctest::Approx(s.mean(i)).epsilon(1e-12));

    CHECK_THROWS_AS(fit_moments(std::vector<std::vector<double>>{{1.0}}), Error);
    CHECK_THROWS_AS(fit_moments(std::vector<std::vector<double>>{{1.0}, {1.0, 2.0}}), Error);
}

TEST_CASE("Frechet closed forms") {
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
    CHECK(std::abs(frechet_distance(moments({0, 0}, I), moments({1, 0}, I)) - 1.0) <= 1e-9);
    CHECK(std::abs(frechet_distance(moments({0, 0}, I), moments({0, 0}, 4 * I)) - 2.0) <= 1e-9);
    CHECK(std::abs(frechet_distance(moments({3, -1}, I), moments({3, -1}, I))) <= 1e-9);

    Eigen::MatrixXd a(2, 2), b(2, 2);
    a << 2.0, 0.3, 0.3, 0.5;
    b << 1.0, -0.2, -0.2, 3.0;
    const double ab = frechet_distance(moments({0.1, 0.2}, a), moments({-0.4, 1.0}, b));
    const double ba = frechet_distance(moments({-0.4, 1.0}, b), moments({0.1, 0.2}, a));
    CHECK(std::abs(ab - ba) <= 1e-9);
    // 2x2 oracle: Tr sqrt(A B) from the eigenvalues of A B
    const Eigen::MatrixXd prod = a * b;
    const double tr = prod.trace(), det = prod.determinant();
    const double tr_sqrt = std::sqrt(tr + 2.0 * std::sqrt(det));
    const double expected = 0.25 + 0.64 + a.trace() + b.trace() - 2.0 * tr_sqrt;
    CHECK(ab == doctest::Approx(expected).epsilon(1e-9));

    // near-singular covariances stay clamped and finite
    const Eigen::MatrixXd tiny = 1e-14 * I;
    const auto r = frechet(moments({0, 0}, tiny), moments({0, 0}, tiny));
    CHECK(r.value >= -1e-6);
    CHECK(std::abs(r.raw) <= 1e-9);

    CHECK_THROWS_AS(frechet(moments({0, 0}, I), moments({0, 0, 0}, Eigen::MatrixXd::Identity(3, 3))), Error);
    Eigen::MatrixXd bad = I;
    bad(0, 0) = NAN;
    CHECK_THROWS_AS(frechet(moments({0, 0}, bad), moments({0, 0}, I)), Error);
}

TEST_CASE("KID hand oracle") {
    const std::vector<std::vector<double>> x{{0.0}, {0.0}}, y{{1.0}, {1.0}};
    CHECK(polynomial_kernel(std::vector<double>{1.0}, std::vector<double>{1.0}) == 8.0);
    CHECK(mmd2_unbiased(x, y) == 7.0);
    const auto k = kid(x, y, 2, 5, 0);
    CHECK(k.mean == 7.0);
    CHECK(k.std == 0.0);
    const std::vector<std::vector<double>> a{{0.3, -1.2}, {0.3, -1.2}};
    CHECK(mmd2_unbiased(a, a) == 0.0);
    CHECK_THROWS_AS(kid(x, y, 3, 5, 0), Error);
    CHECK_THROWS_AS(kid(x, y, 1, 5, 0), Error);
}

TEST_CASE("KID null on same-distribution samples") {
    const auto x = normal_rows(2000, 16, 11), y = normal_rows(2000, 16, 12);
    const auto k = kid(x, y, 100, 50, 3);
    CHECK(k.std > 0.0);
    CHECK(std::abs(k.mean) <= 3.0 * k.std);
    const auto shifted = normal_rows(2000, 16, 13, 0.5);
    const auto far = kid(x, shifted, 100, 50, 3);
    CHECK(far.mean > 3.0 * far.std);
    CHECK(kid(x, y, 100, 50, 3).mean == k.mean);
}

TEST_CASE("inception score") {
    const std::vector<std::vector<double>> uniform(40, std::vector<double>(4, 0.25));
    const auto u = inception_score(uniform, 4, 0);
    CHECK(std::abs(u.mean - 1.0) <= 1e-9);

    std::vector<std::vector<double>> onehot;
    for (int i = 0; i < 30; ++i) {
        std::vector<double> r(3, 0.0);
        r[i % 3] = 1.0;
        onehot.push_back(r);
    }
    CHECK(std::abs(inception_score(onehot, 1, 0).mean - 3.0) <= 1e-9);

    const std::vector<std::vector<double>> same(10, {0.0, 1.0});
    CHECK(std::abs(inception_score(same, 2, 0).mean - 1.0) <= 1e-9);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unit;
    std::vector<ProbabilityVector> probs;
    for (int i = 0; i < 200; ++i) probs.push_back(ProbabilityVector::from_realistic(unit(rng)));
    const auto is = inception_score(probs, 10, 1);
    CHECK(is.mean >= 1.0 - 1e-9);
    CHECK(is.mean <= 2.0 + 1e-9);

    CHECK_THROWS_AS(inception_score(same, 11, 0), Error);
    CHECK_THROWS_AS(inception_score(std::vector<std::vector<double>>{{0.5, 0.6}}, 1, 0), Error);
}

TEST_CASE("classification report") {
    const auto m = classification_report({40, 10, 20, 30});
    CHECK(m.accuracy == doctest::Approx(0.7).epsilon(1e-4));
    CHECK(m.precision == doctest::Approx(0.8).epsilon(1e-4));
    CHECK(m.recall == doctest::Approx(0.6667).epsilon(1e-4));
    CHECK(m.f1 == doctest::Approx(0.7273).epsilon(1e-4));
    CHECK_FALSE(m.degenerate);

    CHECK(std::abs(f1_score(0.8613, 0.87) - 0.8656) <= 5e-4);

    const auto d = classification_report({0, 0, 5, 5});
    CHECK(d.precision == 0.0);
    CHECK(d.f1 == 0.0);
    CHECK(d.degenerate);
    CHECK(classification_report({0, 0, 0, 0}).degenerate);
}

TEST_CASE("confusion counts agree with a direct recount") {
    std::mt19937_64 rng(21);
    std::bernoulli_distribution coin(0.5);
    std::vector<Verdict> pred, truth;
    ConfusionCounts expected;
    for (int i = 0; i < 500; ++i) {
        const bool p = coin(rng), t = coin(rng);
        pred.push_back(p ? Verdict::Realistic : Verdict::Fake);
        truth.push_back(t ? Verdict::Realistic : Verdict::Fake);
        if (p && t) ++expected.tp;
        else if (p) ++expected.fp;
        else if (t) ++expected.fn;
        else ++expected.tn;
    }
    const auto c = confusion(pred, truth);
    CHECK(c == expected);
    const auto m = classification_report(c);
    CHECK(m.accuracy == static_cast<double>(c.tp + c.tn) / c.total());
    CHECK(m.precision == static_cast<double>(c.tp) / (c.tp + c.fp));
    CHECK_THROWS_AS(confusion(pred, std::span<const Verdict>(truth).first(3)), Error);
}

TEST_CASE("ROC AUC") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const bool p[] = {false, false, true, true};
    CHECK(roc_auc(s, p) == doctest::Approx(0.75));
    const std::vector<double> tied{0.5, 0.5};
    const bool tp[] = {true, false};
    CHECK(roc_auc(tied, tp) == 0.5);

    // pairwise oracle
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> unit;
    std::vector<double> scores;
    auto pos_store = std::make_unique<bool[]>(300);
    std::span<bool> pos(pos_store.get(), 300);
    for (int i = 0; i < 300; ++i) {
        scores.push_back(std::round(unit(rng) * 20) / 20);
        pos[i] = unit(rng) < 0.4;
    }
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        for (std::size_t j = 0; j < scores.size(); ++j)
            if (pos[i] && !pos[j]) {
                pairs += 1;
                wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
            }
    CHECK(roc_auc(scores, pos) == doctest::Approx(wins / pairs).epsilon(1e-12));
}

TEST_CASE("metric report") {
    const auto real = as_features(normal_rows(300, 8, 31));
    const auto self = metric_report(real, real);
    CHECK(self.fid <= 1e-6);
    CHECK(std::abs(self.kid_mean) <= 3.0 * self.kid_std + 1e-12);
    CHECK(self.n_real == 300);
    CHECK_FALSE(self.is_mean.has_value());

    const auto gen = as_features(normal_rows(200, 8, 32, 0.3));
    std::vector<std::vector<double>> probs;
    for (int i = 0; i < 200; ++i) probs.push_back({i % 2 ? 0.9 : 0.2, i % 2 ? 0.1 : 0.8});
    const auto a = metric_report(real, gen, &probs);
    const auto b = metric_report(real, gen, &probs);
    CHECK(a.fid == b.fid);
    CHECK(a.kid_mean == b.kid_mean);
    CHECK(a.kid_std == b.kid_std);
    CHECK(*a.is_mean == *b.is_mean);
    CHECK(a.fid > 0.5);
    CHECK(*a.is_mean >= 1.0);
    CHECK(std::isfinite(a.kid_std));
    const auto j = to_json(a);
    CHECK(j.at("n_generated").get<int>() == 200);
}
