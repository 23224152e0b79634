#include "doctest.h"
#include "helpers.hpp"

#include "scatgate/physics.hpp"
#include "scatgate/synth.hpp"

#include <cmath>
#include <numeric>

using namespace scatgate;
using namespace scatgate::physics;

namespace {

double population_std(const std::vector<double>& v) {
    std::vector<double> finite;
    for (double x : v)
        if (std::isfinite(x)) finite.push_back(x);
    const double mean = std::accumulate(finite.begin(), finite.end(), 0.0) / static_cast<double>(finite.size());
    double s = 0.0;
    for (double x : finite) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(finite.size()));
}

ScatterFrame scaled(const ScatterFrame& f, double c) {
    std::vector<double> px(f.intensities().begin(), f.intensities().end());
    for (auto& v : px) v *= c;
    return ScatterFrame(f.id(), f.width(), f.height(), std::move(px), f.gap_mask());
}

synth::CorruptionSpec corruption(synth::CorruptionKind kind, double magnitude, Point2 c, double radius,
                                 std::uint64_t seed = 5) {
    synth::CorruptionSpec cs;
    cs.kind = kind;
    cs.magnitude = magnitude;
    cs.seed = seed;
    cs.center = c;
    cs.ring_radius = radius;
    return cs;
}

}  // namespace

TEST_CASE("find_center recovers an off-midpoint ring") {
    const Point2 truth{260.0, 250.0};
    auto spec = testing::single_ring(truth, 80.0);
    spec.rings.push_back({150.0, 2.5, 0.6});
    const auto f = synth::generate_rings(spec, {512, 512}, 0);
    CenterSearchOptions opts;
    opts.window = 40.0;
    opts.coarse_step = 4;
    const auto r = find_center(f, opts);
    CHECK(std::hypot(r.center.x - truth.x, r.center.y - truth.y) <= 2.0);
    CHECK(center_objective(f, truth, opts) > center_objective(f, {truth.x + 10, truth.y + 10}, opts));
}

TEST_CASE("find_center on a constant frame has no radial structure") {
    CHECK_THROWS_AS(find_center(testing::constant_frame(64, 64, 0.3)), Error);
    CHECK_THROWS_AS(find_center(testing::constant_frame(64, 64, 0.0)), Error);
}

TEST_CASE("search window is clamped to the frame") {
    const auto f = testing::constant_frame(64, 48, 0.2);
    CenterSearchOptions opts;
    opts.window = 40.0;
    const auto fitted = fit_search_window(f, opts);
    CHECK(fitted.window < 24.0);
    CHECK(fitted.window > 0.0);
    opts.window = 5.0;
    CHECK(fit_search_window(f, opts).window == 5.0);
}

TEST_CASE("polar warp of a centered ring is a vertical line") {
    const Point2 c{200.3, 190.7};
    const auto f = synth::generate_rings(testing::single_ring(c, 80.0), {400, 400}, 0);
    const auto polar = warp_polar(f, c);
    CHECK(polar.n_theta == 360);
    CHECK(polar.n_r == 200);
    int rows = 0, hits = 0;
    for (int t = 0; t < polar.n_theta; ++t) {
        int best = -1;
        double best_v = -1.0;
        bool all_occ = true;
        for (int r = 0; r < polar.n_r; ++r) {
            if (!polar.occ(t, r)) {
                all_occ = false;
                continue;
            }
            if (polar.at(t, r) > best_v) {
                best_v = polar.at(t, r);
                best = r;
            }
        }
        if (!all_occ && best < 0) continue;
        ++rows;
        hits += std::abs(best - 80) <= 1;
    }
    CHECK(hits >= 0.99 * rows);
    CHECK(population_std(ridge_positions(polar, 80, 5)) <= 1.0);
}

TEST_CASE("decentered warp bends the ridge") {
    const Point2 c{256.0, 256.0};
    const auto f = synth::generate_rings(testing::single_ring(c, 80.0), {512, 512}, 0);
    const auto polar = warp_polar(f, {c.x + 10, c.y});
    CHECK(population_std(ridge_positions(polar, 80, 15)) > 3.0);
}

TEST_CASE("polar warp masks and preconditions") {
    const auto f = testing::constant_frame(64, 64, 0.42);
    const auto polar = warp_polar(f, {31.5, 31.5}, 64, 40);
    int occ = 0;
    for (int t = 0; t < polar.n_theta; ++t)
        for (int r = 0; r < polar.n_r; ++r)
            if (polar.occ(t, r)) {
                ++occ;
                CHECK(std::abs(polar.at(t, r) - 0.42) <= 1e-6);
            }
    CHECK(occ > 0);
    // samples past the frame edge are unoccupied
    CHECK_FALSE(polar.occ(0, 39));
    CHECK_THROWS_AS(warp_polar(f, {31.5, 31.5}, 4, 40), Error);
    CHECK_THROWS_AS(warp_polar(f, {31.5, 31.5}, 64, 4), Error);
    CHECK_THROWS_AS(warp_polar(f, {70.0, 31.5}), Error);

    auto spec = testing::single_ring({64, 64}, 40.0);
    spec.beamstop_radius = 10.0;
    spec.background_level = 0.05;
    spec.gap_bands = {{synth::BandOrientation::Row, 100, 3}};
    const auto g = synth::generate_rings(spec, {128, 128}, 0);
    const auto gp = warp_polar(g, {64, 64});
    CHECK_FALSE(gp.occ(0, 3));   // beamstop
    CHECK(gp.occ(0, 20));
    CHECK_FALSE(gp.occ(90, 37));  // row 101 lies on the gap band
}

TEST_CASE("symmetry score") {
    const Point2 c{128, 128};
    const auto f = synth::generate_rings(testing::single_ring(c, 70.0), {256, 256}, 0);
    CHECK(symmetry_score(warp_polar(f, c)) >= 0.99);

    // rotating the input by 180 degrees leaves the score unchanged
    const auto spec = synth::random_ring_spec({256, 256}, 3, 0.0, 0.0, false);
    auto g = synth::generate_rings(spec, {256, 256}, 3);
    g = synth::corrupt(g, corruption(synth::CorruptionKind::AsymmetricIntensity, 0.5, spec.center, 0));
    std::vector<double> rotated(g.intensities().rbegin(), g.intensities().rend());
    const ScatterFrame gr("r", 256, 256, rotated);
    const Point2 rc{255.0 - spec.center.x, 255.0 - spec.center.y};
    CHECK(symmetry_score(warp_polar(gr, rc)) ==
          doctest::Approx(symmetry_score(warp_polar(g, spec.center))).epsilon(1e-3));

    PolarImage sparse;
    sparse.n_theta = 8;
    sparse.n_r = 8;
    sparse.values.assign(64, 0.5);
    sparse.occupied.assign(64, 0);
    sparse.occupied[0] = sparse.occupied[4 * 8] = 1;
    try {
        symmetry_score(sparse);
        FAIL("expected insufficient coverage");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Insufficient);
    }
}

TEST_CASE("continuity score") {
    const Point2 c{128, 128};
    const auto f = synth::generate_rings(testing::single_ring(c, 80.0), {256, 256}, 0);
    CHECK(continuity_score(warp_polar(f, c)) == doctest::Approx(1.0).epsilon(0.01));

    const auto cut = synth::corrupt(f, corruption(synth::CorruptionKind::BrokenArc, 1.0 / 3.0, c, 80.0));
    CHECK(continuity_score(warp_polar(cut, c)) == doctest::Approx(300.0 / 360.0).epsilon(0.02));

    auto two = testing::single_ring(c, 50.0);
    two.rings.push_back({100.0, 2.0, 0.8});
    const auto g = synth::generate_rings(two, {256, 256}, 0);
    const auto half = synth::corrupt(g, corruption(synth::CorruptionKind::BrokenArc, 1.0, c, 100.0));
    const std::vector<int> radii{50, 100};
    CHECK(continuity_score(warp_polar(half, c), radii) == doctest::Approx(0.75).epsilon(0.02));
    CHECK(detect_ring_radii(warp_polar(g, c)) == radii);

    CHECK_THROWS_AS(continuity_score(warp_polar(testing::constant_frame(64, 64, 0.1), {31.5, 31.5})), Error);
}

TEST_CASE("verticality score") {
    const Point2 c{128, 128};
    const auto f = synth::generate_rings(testing::single_ring(c, 80.0), {256, 256}, 0);
    const double clean = verticality_score(warp_polar(f, c));
    CHECK(clean >= 0.9);
    const auto sheared = synth::corrupt(f, corruption(synth::CorruptionKind::AzimuthalShear, 0.5, c, 80.0));
    CHECK(verticality_score(warp_polar(sheared, c)) < clean);

    // a ridge exactly on a bin in every row
    PolarImage p;
    p.n_theta = 16;
    p.n_r = 20;
    p.values.assign(16 * 20, 0.0);
    p.occupied.assign(16 * 20, 1);
    for (int t = 0; t < 16; ++t) {
        p.values[t * 20 + 9] = 0.5;
        p.values[t * 20 + 10] = 1.0;
        p.values[t * 20 + 11] = 0.5;
    }
    const std::vector<int> r{10};
    CHECK(verticality_score(p, r) == 1.0);
}

TEST_CASE("gap straightness") {
    CHECK(gap_straightness(testing::random_frame(64, 64, 1)) == 1.0);
    auto spec = synth::random_ring_spec({256, 256}, 8, 5.0, 0.0, false);
    spec.gap_bands = {{synth::BandOrientation::Row, 60, 4}, {synth::BandOrientation::Column, 180, 3}};
    const auto f = synth::generate_rings(spec, {256, 256}, 8);
    CHECK(gap_straightness(f) >= 0.99);
    const auto wavy = synth::corrupt(f, corruption(synth::CorruptionKind::WavyGap, 1.0, spec.center, 0));
    CHECK(gap_straightness(wavy) <= 0.2);
}

TEST_CASE("realism report") {
    const synth::FrameSize size{256, 256};
    const auto spec = synth::random_ring_spec(size, 12, 15.0, 0.0, true);
    const auto f = synth::generate_rings(spec, size, 12);
    RealismOptions opts;
    opts.pattern = PatternClass::Rings;
    const auto r = realism_report(f, opts);
    CHECK(std::hypot(r.center.x - spec.center.x, r.center.y - spec.center.y) <= 2.0);
    CHECK(r.composite >= 0.95);
    CHECK(r.flags.empty());
    CHECK(r.errors.empty());
    CHECK(r.composite == doctest::Approx(0.3 * r.symmetry + 0.3 * r.continuity + 0.2 * r.gap_straightness +
                                         0.2 * r.verticality));

    SUBCASE("ghost texture raises a flag") {
        const auto g = synth::corrupt(f, corruption(synth::CorruptionKind::GhostTexture, 1.0, spec.center, 0));
        CHECK_FALSE(realism_report(g, opts).flags.empty());
    }
    SUBCASE("degenerate weights pick out one score") {
        RealismOptions w = opts;
        w.weights = {1.0, 0.0, 0.0, 0.0};
        const auto rw = realism_report(f, w);
        CHECK(rw.composite == rw.symmetry);
    }
    SUBCASE("weights must be a convex combination") {
        RealismOptions w = opts;
        w.weights = {0.5, 0.5, 0.5, 0.0};
        CHECK_THROWS_AS(realism_report(f, w), Error);
        w.weights = {1.5, -0.5, 0.0, 0.0};
        CHECK_THROWS_AS(realism_report(f, w), Error);
    }
    SUBCASE("a failing sub-score is recorded as 0 with a flag") {
        synth::RingSpec bg;
        bg.center = {128, 128};
        bg.background_level = 0.05;
        const auto empty = synth::generate_background(bg, size, 0);
        const auto rr = realism_report(empty, opts);
        CHECK(rr.continuity == 0.0);
        CHECK(rr.verticality == 0.0);
        CHECK(std::count(rr.flags.begin(), rr.flags.end(), "continuity") == 1);
        CHECK(std::any_of(rr.errors.begin(), rr.errors.end(), [](const auto& e) { return e.first == "continuity"; }));

        RealismOptions as_background = opts;
        as_background.pattern = PatternClass::Background;
        const auto rb = realism_report(empty, as_background);
        CHECK(rb.continuity == 1.0);
        CHECK(rb.verticality == 1.0);
    }
    const auto json = to_json(r);
    CHECK(json.at("composite").get<double>() == r.composite);
    CHECK(json.at("flags").empty());
}

TEST_CASE("scores are invariant under global intensity scaling") {
    const synth::FrameSize size{256, 256};
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        const auto spec = synth::random_ring_spec(size, seed, 10.0, 0.0, true);
        const auto f = synth::generate_rings(spec, size, seed);
        RealismOptions opts;
        opts.pattern = PatternClass::Rings;
        opts.center = spec.center;
        const auto base = realism_report(f, opts);
        for (double c : {0.5, 0.75, 1.0}) {
            const auto r = realism_report(scaled(f, c), opts);
            CHECK(std::abs(r.symmetry - base.symmetry) <= 0.02);
            CHECK(std::abs(r.continuity - base.continuity) <= 0.02);
            CHECK(std::abs(r.verticality - base.verticality) <= 0.02);
            CHECK(std::abs(r.gap_straightness - base.gap_straightness) <= 0.02);
        }
    }
}
