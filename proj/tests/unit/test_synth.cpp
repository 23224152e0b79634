#include "doctest.h"
#include "helpers.hpp"

#include "scatgate/physics.hpp"
#include "scatgate/store.hpp"
#include "scatgate/synth.hpp"

#include <cmath>

using namespace scatgate;
using namespace scatgate::synth;
using testing::TempDir;

namespace {

double ring_term(double d, double r, double sigma) { return std::exp(-(d - r) * (d - r) / (2 * sigma * sigma)); }

// Fraction of angular bins at `radius` whose value is at least half the ring median.
double occupancy_at(const physics::PolarImage& p, int radius) {
    std::vector<double> row;
    for (int t = 0; t < p.n_theta; ++t) row.push_back(p.at(t, radius));
    std::vector<double> sorted = row;
    std::sort(sorted.begin(), sorted.end());
    const double ref = sorted.back();
    int on = 0;
    for (double v : row) on += v >= 0.5 * ref;
    return static_cast<double>(on) / p.n_theta;
}

}  // namespace

TEST_CASE("ring intensity follows the Gaussian ridge formula") {
    const auto spec = testing::single_ring({128.0, 128.0}, 80.0);
    const auto f = generate_rings(spec, {256, 256}, 1);
    CHECK(f.at(128 + 80, 128) >= 0.99);
    CHECK(f.at(128, 128 - 80) >= 0.99);
    CHECK(f.at(128 + 90, 128) == doctest::Approx(std::exp(-100.0 / 8.0)).epsilon(1e-9));
    CHECK(f.at(128 + 90, 128) == doctest::Approx(3.7e-6).epsilon(0.02));
    // every pixel matches the closed form
    double worst = 0.0;
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x)
            worst = std::max(worst, std::abs(f.at(x, y) - ring_term(std::hypot(x - 128.0, y - 128.0), 80.0, 2.0)));
    CHECK(worst < 1e-12);
    CHECK_FALSE(f.has_gap_mask());
}

TEST_CASE("ring beamstop, gaps, background and noise") {
    RingSpec spec = testing::single_ring({100.5, 120.25}, 60.0);
    spec.beamstop_radius = 12.0;
    spec.background_level = 0.04;
    spec.gap_bands = {{BandOrientation::Row, 30, 4}, {BandOrientation::Column, 200, 3}};
    const auto f = generate_rings(spec, {256, 240}, 7);
    CHECK(f.at(100, 120) == 0.0);
    REQUIRE(f.has_gap_mask());
    for (int x = 0; x < 200; ++x) {
        CHECK(f.at(x, 31) == 0.0);
        CHECK(f.is_gap(x, 33));
        CHECK_FALSE(f.is_gap(x, 34));
    }
    CHECK(f.at(201, 10) == 0.0);
    CHECK(f.at(0, 0) == doctest::Approx(0.04 + ring_term(std::hypot(100.5, 120.25), 60, 2)));

    spec.noise_sigma = 0.01;
    const auto a = generate_rings(spec, {256, 240}, 99);
    const auto b = generate_rings(spec, {256, 240}, 99);
    const auto c = generate_rings(spec, {256, 240}, 100);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    for (double v : a.intensities()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("generator preconditions") {
    RingSpec bad = testing::single_ring({128, 128}, 80.0);
    bad.beamstop_radius = 90.0;
    CHECK_THROWS_AS(generate_rings(bad, {256, 256}, 0), Error);
    CHECK_THROWS_AS(generate_rings(testing::single_ring({128, 128}, 500.0), {256, 256}, 0), Error);
    CHECK_THROWS_AS(generate_rings(testing::single_ring({128, 128}, 80.0, 2.0, 1.5), {256, 256}, 0), Error);
    CHECK_THROWS_AS(generate_rings(testing::single_ring({128, 128}, 80.0, 2.0, 0.0), {256, 256}, 0), Error);
    RingSpec bg;
    bg.background_level = 0.5;
    CHECK_THROWS_AS(generate_background(bg, {64, 64}, 0), Error);
}

TEST_CASE("peaks are angular Gaussian windows") {
    PeakSpec spec;
    spec.center = {128.0, 128.0};
    spec.peaks = {{70.0, 0.0, 5.0, 2.0, 1.0}};
    spec.symmetry_pairs = false;
    const auto f = generate_peaks(spec, {256, 256}, 3);
    CHECK(f.at(128 + 70, 128) >= 0.99);
    CHECK(f.at(128, 128 + 70) < 1e-8);
    CHECK(f.at(128, 128 - 70) < 1e-8);
    CHECK(f.at(128 - 70, 128) < 1e-8);

    spec.symmetry_pairs = true;
    const auto g = generate_peaks(spec, {256, 256}, 3);
    CHECK(g.at(128 - 70, 128) >= 0.99);
    for (int y = 0; y < 256; ++y)
        for (int x = 1; x < 256; ++x) CHECK(g.at(x, y) == doctest::Approx(g.at(256 - x, 256 - y)).epsilon(1e-9));
}

TEST_CASE("background frames") {
    RingSpec spec;
    spec.center = {64.0, 64.0};
    spec.background_level = 0.05;
    spec.beamstop_radius = 6.0;
    spec.gap_bands = {{BandOrientation::Column, 10, 2}};
    const auto f = generate_background(spec, {128, 128}, 5);
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x) {
            if (std::hypot(x - 64.0, y - 64.0) < 6.0 || f.is_gap(x, y)) CHECK(f.at(x, y) == 0.0);
            else CHECK(f.at(x, y) == doctest::Approx(0.05).epsilon(1e-12));
        }
    CHECK(generate_background(spec, {128, 128}, 5) == f);
}

TEST_CASE("noise-free rings are point symmetric about the true center") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto spec = random_ring_spec({256, 256}, seed, 20.0, 0.0, false);
        spec.beamstop_radius = 0.0;
        const auto f = generate_rings(spec, {256, 256}, seed);
        const auto polar = physics::warp_polar(f, spec.center, 360, 100);
        double err = 0.0;
        int n = 0;
        for (int t = 0; t < 180; ++t)
            for (int r = 0; r < polar.n_r; ++r)
                if (polar.occ(t, r) && polar.occ(t + 180, r)) {
                    err += std::abs(polar.at(t, r) - polar.at(t + 180, r));
                    ++n;
                }
        REQUIRE(n > 0);
        CHECK(err / n <= 1e-3);
    }
}

TEST_CASE("corruption identity limit") {
    auto spec = random_ring_spec({128, 128}, 4, 5.0, 0.0, true);
    const auto f = generate_rings(spec, {128, 128}, 4);
    REQUIRE(f.has_gap_mask());
    for (auto kind : kAllCorruptions) {
        CAPTURE(std::string(to_string(kind)));
        CorruptionSpec cs;
        cs.kind = kind;
        cs.magnitude = 1e-9;
        cs.seed = 11;
        cs.center = spec.center;
        cs.ring_radius = spec.rings.front().radius;
        const auto g = corrupt(f, cs);
        double worst = 0.0;
        for (std::size_t i = 0; i < f.intensities().size(); ++i)
            worst = std::max(worst, std::abs(f.intensities()[i] - g.intensities()[i]));
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("corruption preconditions and determinism") {
    const auto f = generate_rings(testing::single_ring({64, 64}, 40.0), {128, 128}, 0);
    CorruptionSpec cs;
    cs.kind = CorruptionKind::WavyGap;
    CHECK_THROWS_AS(corrupt(f, cs), Error);
    cs.kind = CorruptionKind::GhostTexture;
    cs.magnitude = 0.0;
    CHECK_THROWS_AS(corrupt(f, cs), Error);
    cs.magnitude = 1.5;
    CHECK_THROWS_AS(corrupt(f, cs), Error);
    cs.magnitude = 0.7;
    cs.seed = 3;
    CHECK(corrupt(f, cs) == corrupt(f, cs));
    for (auto k : kAllCorruptions) CHECK(parse_corruption(to_string(k)) == k);
}

TEST_CASE("BrokenArc of magnitude 1/3 leaves 5/6 of the ring") {
    const Point2 c{128.0, 128.0};
    const auto f = generate_rings(testing::single_ring(c, 80.0), {256, 256}, 0);
    CorruptionSpec cs;
    cs.kind = CorruptionKind::BrokenArc;
    cs.magnitude = 1.0 / 3.0;
    cs.seed = 9;
    cs.center = c;
    cs.ring_radius = 80.0;
    const auto g = corrupt(f, cs);
    CHECK(occupancy_at(physics::warp_polar(f, c, 360, 120), 80) == doctest::Approx(1.0));
    CHECK(occupancy_at(physics::warp_polar(g, c, 360, 120), 80) == doctest::Approx(5.0 / 6.0).epsilon(0.02));
}

TEST_CASE("AsymmetricIntensity breaks point symmetry") {
    const auto spec = random_ring_spec({256, 256}, 17, 10.0, 0.0, false);
    const Point2 c = spec.center;
    const auto f = generate_rings(spec, {256, 256}, 17);
    CorruptionSpec cs;
    cs.kind = CorruptionKind::AsymmetricIntensity;
    cs.magnitude = 0.8;
    cs.center = c;
    CHECK(physics::symmetry_score(physics::warp_polar(f, c)) >= 0.99);
    CHECK(physics::symmetry_score(physics::warp_polar(corrupt(f, cs), c)) <= 0.6);
}

TEST_CASE("every corruption lowers its targeted score, monotone in magnitude") {
    const FrameSize size{256, 256};
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto spec = random_ring_spec(size, seed, 10.0, 0.0, true);
        const auto clean = generate_rings(spec, size, seed);
        physics::RealismOptions opts;
        opts.center = spec.center;
        opts.pattern = PatternClass::Rings;
        const auto base = physics::realism_report(clean, opts);
        for (auto kind : kAllCorruptions) {
            CAPTURE(std::string(to_string(kind)));
            CAPTURE(seed);
            const auto targeted = kind == CorruptionKind::BrokenArc            ? physics::Criterion::Continuity
                                  : kind == CorruptionKind::AzimuthalShear     ? physics::Criterion::Verticality
                                  : kind == CorruptionKind::AsymmetricIntensity ? physics::Criterion::Symmetry
                                  : kind == CorruptionKind::WavyGap            ? physics::Criterion::GapStraightness
                                                                               : physics::Criterion::Symmetry;
            double previous = base.score(targeted);
            for (double m : {0.3, 0.6, 1.0}) {
                CorruptionSpec cs;
                cs.kind = kind;
                cs.magnitude = m;
                cs.seed = seed * 31;
                cs.center = spec.center;
                cs.ring_radius = spec.rings.front().radius;
                const double s = physics::realism_report(corrupt(clean, cs), opts).score(targeted);
                CHECK(s < base.score(targeted));
                CHECK(s <= previous + 1e-9);
                previous = s;
            }
        }
    }
}

TEST_CASE("corpus generation") {
    TempDir dir("corpus");
    CorpusConfig cfg;
    cfg.size = {64, 64};
    cfg.counts[PatternClass::Rings] = {0, 10, 10};
    const auto corpus = generate_corpus(cfg, dir.path(), 42);

    CHECK(corpus.manifest.size() == 20);
    CHECK(corpus.labels.size() == 20);
    int realistic = 0;
    for (const auto& l : corpus.labels) {
        realistic += l.verdict == Verdict::Realistic;
        CHECK(l.source == LabelSource::Human);
        CHECK(l.annotator == "oracle");
    }
    CHECK(realistic == 10);
    int files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "images")) files += e.path().extension() == ".png";
    CHECK(files == 20);

    CHECK(read_manifest(dir / "manifest.jsonl") == corpus.manifest);
    const auto truth = read_truth(dir / "truth.jsonl");
    REQUIRE(truth.size() == 20);
    for (const auto& t : truth) {
        REQUIRE(corpus.manifest.find_id(t.id));
        REQUIRE(t.ring_spec.has_value());
        CHECK(t.center().x == t.ring_spec->center.x);
        CHECK(t.corruption.has_value() == (t.verdict == Verdict::Fake));
    }

    SUBCASE("same seed twice gives an identical corpus") {
        TempDir other("corpus");
        const auto again = generate_corpus(cfg, other.path(), 42);
        CHECK(again.manifest == corpus.manifest);
        CHECK(read_jsonl(other / "truth.jsonl") == read_jsonl(dir / "truth.jsonl"));
        for (const auto& e : corpus.manifest.entries())
            CHECK(load_corpus_frame(dir.path(), e) == load_corpus_frame(other.path(), e));
    }
    SUBCASE("items do not depend on the other pattern counts") {
        CorpusConfig bigger = cfg;
        bigger.counts[PatternClass::Peaks] = {2, 3, 3};
        const auto a = generate_items(cfg, 42);
        const auto b = generate_items(bigger, 42);
        for (const auto& item : a) {
            auto it = std::find_if(b.begin(), b.end(), [&](const GeneratedItem& g) { return g.entry == item.entry; });
            REQUIRE(it != b.end());
            CHECK(it->frame == item.frame);
        }
    }
}

TEST_CASE("corpus config parsing") {
    const auto cfg = parse_corpus_config(R"(
width = 96
height = 80
magnitude_min = 0.4
kinds = ["BrokenArc", "WavyGap"]
[counts.rings]
experimental = 3
clean = 4
corrupted = 5
[counts.background]
clean = 1
)");
    CHECK(cfg.size.width == 96);
    CHECK(cfg.size.height == 80);
    CHECK(cfg.kinds.size() == 2);
    CHECK(cfg.counts.at(PatternClass::Rings).corrupted == 5);
    CHECK(cfg.counts.at(PatternClass::Background).clean == 1);
    CHECK_THROWS_AS(parse_corpus_config("[counts.rings]\nclean = -1\n"), Error);
    CHECK_THROWS_AS(parse_corpus_config("magnitude_min = 0.0\n"), Error);
    CHECK_THROWS_AS(parse_corpus_config("width = -3\n"), Error);
    CHECK_THROWS_AS(parse_corpus_config("gap_probability = 1.5\n"), Error);
    CHECK_THROWS_AS(parse_corpus_config("kinds = [\"Melting\"]\n"), Error);
}
