#include "doctest.h"

#include "scatgate/ensemble.hpp"

#include <algorithm>
#include <numeric>
#include <random>

using namespace scatgate;
using namespace scatgate::ensemble;

namespace {

constexpr Verdict R = Verdict::Realistic;
constexpr Verdict F = Verdict::Fake;

std::vector<ProbabilityVector> probs_of(std::initializer_list<double> ps) {
    std::vector<ProbabilityVector> out;
    for (double p : ps) out.push_back(ProbabilityVector::from_realistic(p));
    return out;
}

// Independent recount: enumerate voters one by one.
Verdict brute_hard(const std::vector<ProbabilityVector>& probs, double threshold, Verdict tie_break) {
    int yes = 0, no = 0;
    for (const auto& p : probs) {
        if (p.p_realistic() >= threshold) ++yes;
        else ++no;
    }
    if (yes == no) return tie_break;
    return yes > no ? R : F;
}

double brute_soft(const std::vector<ProbabilityVector>& probs, const std::vector<double>& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) s += weights[i] * probs[i].p_realistic();
    return s;
}

std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> w(n);
    for (auto& v : w) v = unit(rng);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& v : w) v /= total;
    return w;
}

}  // namespace

TEST_CASE("hard voting") {
    const std::vector<Verdict> a{R, R, R, F, F}, b{R, R, F, F}, c{F};
    CHECK(hard_vote(a) == R);
    CHECK(hard_vote(b, F) == F);
    CHECK(hard_vote(b, R) == R);
    CHECK(hard_vote(c) == F);
    CHECK_THROWS_AS(hard_vote(std::vector<Verdict>{}), Error);
}

TEST_CASE("soft voting") {
    const auto d = soft_vote(probs_of({0.9, 0.2, 0.7}));
    CHECK(d.p_realistic == doctest::Approx(0.6));
    CHECK(d.verdict == R);
    const std::vector<double> w{0.5, 0.25, 0.25};
    const auto e = soft_vote(probs_of({0.2, 0.9, 0.9}), w);
    CHECK(e.p_realistic == doctest::Approx(0.55));
    CHECK(e.verdict == R);
    CHECK(soft_vote(probs_of({0.4, 0.4}), {}, 0.5).verdict == F);
    CHECK(soft_vote(probs_of({0.5, 0.5}), {}, 0.5).verdict == R);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const auto ww = random_weights(4, rng);
        CHECK(soft_vote(probs_of({0.37, 0.37, 0.37, 0.37}), ww).p_realistic == doctest::Approx(0.37).epsilon(1e-12));
    }
    CHECK_THROWS_AS(soft_vote(probs_of({0.2, 0.3}), w), Error);
    const std::vector<double> bad{0.7, 0.7};
    CHECK_THROWS_AS(soft_vote(probs_of({0.2, 0.3}), bad), Error);
}

TEST_CASE("vote config validation") {
    VoteConfig c;
    c.strategy = Strategy::SoftWeighted;
    c.weights = {0.5, 0.5};
    CHECK_NOTHROW(c.validate(2));
    CHECK_THROWS_AS(c.validate(3), Error);
    c.weights = {1.2, -0.2};
    CHECK_THROWS_AS(c.validate(2), Error);
    c.strategy = Strategy::Hard;
    c.weights.clear();
    c.threshold = 1.5;
    CHECK_THROWS_AS(c.validate(2), Error);
    for (auto s : {Strategy::Hard, Strategy::SoftAverage, Strategy::SoftWeighted})
        CHECK(parse_strategy(to_string(s)) == s);
}

TEST_CASE("random panels match a brute-force reimplementation") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> size(3, 9);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int panel = 0; panel < 1000; ++panel) {
        const int n = size(rng);
        std::vector<ProbabilityVector> probs;
        for (int i = 0; i < n; ++i) {
            // coarse grid so exact ties and threshold hits occur
            probs.push_back(ProbabilityVector::from_realistic(std::round(unit(rng) * 10) / 10));
        }
        const auto w = random_weights(n, rng);
        const Verdict tie = unit(rng) < 0.5 ? R : F;

        VoteConfig hard{Strategy::Hard, {}, 0.5, tie};
        CHECK(combine(probs, hard).verdict == brute_hard(probs, 0.5, tie));

        VoteConfig weighted{Strategy::SoftWeighted, w, 0.5, tie};
        const auto dw = combine(probs, weighted);
        const double expected = brute_soft(probs, w);
        CHECK(dw.p_realistic == expected);
        CHECK(dw.verdict == (expected >= 0.5 ? R : F));

        const std::vector<double> uniform(n, 1.0 / n);
        VoteConfig avg{Strategy::SoftAverage, {}, 0.5, tie};
        VoteConfig uni{Strategy::SoftWeighted, uniform, 0.5, tie};
        const auto da = combine(probs, avg), du = combine(probs, uni);
        CHECK(da.p_realistic == du.p_realistic);
        CHECK(da.verdict == du.verdict);
    }
}

TEST_CASE("permutation invariance and monotonicity") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        const int n = 5;
        std::vector<double> p(n);
        for (auto& v : p) v = unit(rng);
        const auto w = random_weights(n, rng);
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<ProbabilityVector> a, b;
        std::vector<double> wb;
        for (int i = 0; i < n; ++i) a.push_back(ProbabilityVector::from_realistic(p[i]));
        for (int i : perm) {
            b.push_back(ProbabilityVector::from_realistic(p[i]));
            wb.push_back(w[i]);
        }
        CHECK(soft_vote(a, w).p_realistic == doctest::Approx(soft_vote(b, wb).p_realistic).epsilon(1e-12));

        const int k = t % n;
        auto raised = a;
        raised[k] = ProbabilityVector::from_realistic(std::min(1.0, p[k] + unit(rng) * (1.0 - p[k])));
        CHECK(soft_vote(raised, w).p_realistic >= soft_vote(a, w).p_realistic);
    }
}

TEST_CASE("weight fitting") {
    // classifier 0: precision 0.9 (9 TP, 1 FP); classifier 1: precision 0.7 (7 TP, 3 FP)
    std::vector<Verdict> labels;
    PredictionPanel panel(2);
    for (int i = 0; i < 20; ++i) {
        const bool real = i < 10;
        labels.push_back(real ? R : F);
        const bool c0 = real ? i != 0 : i == 10;
        const bool c1 = real ? i < 7 : i < 13;
        panel[0].push_back(ProbabilityVector::from_realistic(c0 ? 0.8 : 0.2));
        panel[1].push_back(ProbabilityVector::from_realistic(c1 ? 0.8 : 0.2));
    }
    const auto fit = fit_weights(panel, labels);
    REQUIRE(fit.initial.size() == 2);
    CHECK(fit.initial[0] == doctest::Approx(0.8));
    CHECK(fit.initial[1] == doctest::Approx(0.2));
    CHECK(std::accumulate(fit.weights.begin(), fit.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));

    // refinement never ends below the uniform-weight precision
    VoteConfig uni{Strategy::SoftAverage, {}, 0.5, F};
    const auto decisions = combine_all(panel, uni);
    std::vector<Verdict> pred;
    for (const auto& d : decisions) pred.push_back(d.verdict);
    const double uniform_precision = metrics::classification_report(metrics::confusion(pred, labels)).precision;
    CHECK(fit.precision >= uniform_precision);

    SUBCASE("identical classifiers") {
        PredictionPanel same{panel[0], panel[0], panel[0]};
        const auto f = fit_weights(same, labels);
        VoteConfig wc{Strategy::SoftWeighted, f.weights, 0.5, F};
        const auto d = combine_all(same, wc);
        for (std::size_t i = 0; i < d.size(); ++i)
            CHECK(d[i].p_realistic == doctest::Approx(panel[0][i].p_realistic()).epsilon(1e-12));
    }
    SUBCASE("all precisions at or below one half fall back to uniform") {
        PredictionPanel bad(2, std::vector<ProbabilityVector>(20, ProbabilityVector::from_realistic(0.9)));
        const auto f = fit_weights(bad, labels);
        CHECK(f.weights[0] == doctest::Approx(0.5));
        CHECK_FALSE(f.warnings.empty());
    }
    CHECK_THROWS_AS(fit_weights(PredictionPanel{panel[0]}, labels), Error);
}

TEST_CASE("evaluation grid agrees with a direct recount") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int n = 60;
    std::vector<Verdict> labels;
    PredictionPanel panel(3);
    for (int i = 0; i < n; ++i) {
        const bool real = unit(rng) < 0.5;
        labels.push_back(real ? R : F);
        for (auto& c : panel) c.push_back(ProbabilityVector::from_realistic(std::clamp(unit(rng) * 0.8 + (real ? 0.2 : 0.0), 0.0, 1.0)));
    }
    const std::vector<std::string> names{"a", "b", "c"};
    const auto strategies = standard_strategies({0.5, 0.3, 0.2});
    const auto report = evaluate_grid(names, panel, strategies, labels, 2);
    CHECK(report.round == 2);
    CHECK(report.rows.size() == 6);
    for (const auto& s : strategies) {
        const auto* row = report.find(s.name);
        REQUIRE(row);
        CHECK(row->is_strategy);
        metrics::ConfusionCounts cc;
        for (int i = 0; i < n; ++i) {
            std::vector<ProbabilityVector> item;
            for (const auto& c : panel) item.push_back(c[i]);
            Verdict v;
            if (s.config.strategy == Strategy::Hard) v = brute_hard(item, 0.5, F);
            else if (s.config.strategy == Strategy::SoftAverage)
                v = brute_soft(item, {1.0 / 3, 1.0 / 3, 1.0 / 3}) >= 0.5 ? R : F;
            else v = brute_soft(item, {0.5, 0.3, 0.2}) >= 0.5 ? R : F;
            if (v == R && labels[i] == R) ++cc.tp;
            else if (v == R) ++cc.fp;
            else if (labels[i] == R) ++cc.fn;
            else ++cc.tn;
        }
        CHECK(row->counts == cc);
        const auto m = metrics::classification_report(cc);
        CHECK(std::abs(row->metrics.precision - m.precision) <= 1e-12);
        CHECK(std::abs(row->metrics.f1 - m.f1) <= 1e-12);
    }
    const auto back = ensemble_report_from_json(to_json(report));
    REQUIRE(back.rows.size() == report.rows.size());
    CHECK(back.rows[4].counts == report.rows[4].counts);
    CHECK(report.find("missing") == nullptr);
}
