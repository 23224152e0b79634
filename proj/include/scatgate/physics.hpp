#pragma once
/**
 * Diffraction-law realism checks.
 *
 * The beam center is found by grid search over candidate centers, scoring
 * each by the sharpness of the angular-mean radial profile of the polar
 * warp. In polar space true rings are vertical lines; the four scores below
 * quantify point symmetry, ring continuity, ridge verticality and detector
 * gap straightness.
 */

#include "scatgate/frame.hpp"

#include "json.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scatgate::physics {

/// Rows = angular bins (theta_i = 360 i / n_theta degrees), columns = radial
/// bins of 1 px (bin j sits at radius j).
struct PolarImage {
    int n_theta = 0;
    int n_r = 0;
    Point2 center;
    double max_radius = 0.0;
    std::vector<double> values;
    std::vector<std::uint8_t> occupied;

    double at(int t, int r) const { return values[static_cast<std::size_t>(t) * n_r + r]; }
    bool occ(int t, int r) const { return occupied[static_cast<std::size_t>(t) * n_r + r] != 0; }
};

/**
 * Pixels excluded from polar sampling: the gap mask plus the beamstop, i.e.
 * the compact zero-intensity blob (not touching the border) containing or
 * within a few pixels of `near`.
 */
std::vector<std::uint8_t> dead_pixel_mask(const ScatterFrame& frame, Point2 near);

PolarImage warp_polar(const ScatterFrame& frame, Point2 center, int n_theta = 360, int n_r = 0);
PolarImage warp_polar(const ScatterFrame& frame, Point2 center, int n_theta, int n_r,
                      std::span<const std::uint8_t> dead);

struct CenterSearchOptions {
    double window = 40.0;  // half-width around the frame midpoint, px
    int coarse_step = 4;
    int n_theta = 360;
    int n_r = 0;  // 0: min(width, height) / 2
};

struct CenterResult {
    Point2 center;
    double objective = 0.0;
};

/// Fraction of the polar-sample variance explained by the angular-mean radial
/// profile at `center`; 1 for perfectly concentric structure.
double center_objective(const ScatterFrame& frame, Point2 center, const CenterSearchOptions& options = {});

/// Shrinks the search window so it fits inside the frame around the midpoint.
CenterSearchOptions fit_search_window(const ScatterFrame& frame, CenterSearchOptions options);

/// Coarse grid, unit-step refinement, then quarter-pixel quadratic refinement.
CenterResult find_center(const ScatterFrame& frame, const CenterSearchOptions& options = {});

/// Angular mean over occupied samples per radial bin; NaN where fewer than
/// 10% of the angular bins are occupied.
std::vector<double> radial_profile(const PolarImage& polar);

/// Local maxima of the radial profile with at least `min_prominence`.
std::vector<int> detect_ring_radii(const PolarImage& polar, double min_prominence = 0.05);

/// Ridge position per angular row: argmax within +-half_window bins of
/// `radius`, refined by a three-point parabola. NaN for rows whose window is
/// flat or not fully occupied.
std::vector<double> ridge_positions(const PolarImage& polar, int radius, int half_window);

double symmetry_score(const PolarImage& polar);
double continuity_score(const PolarImage& polar, std::span<const int> ring_radii = {});
double verticality_score(const PolarImage& polar, std::span<const int> ring_radii = {});
double gap_straightness(const ScatterFrame& frame);

inline constexpr double kSymmetryEpsilon = 1e-3;
inline constexpr double kVerticalityScale = 2.0;   // bins
inline constexpr double kGapResidualScale = 1.5;   // px

enum class Criterion { Symmetry, Continuity, GapStraightness, Verticality };
inline constexpr std::array<const char*, 4> kCriterionNames{"symmetry", "continuity",
                                                            "gap_straightness", "verticality"};

struct RealismOptions {
    // Order: symmetry, continuity, gap_straightness, verticality.
    std::array<double, 4> weights{0.3, 0.3, 0.2, 0.2};
    std::array<double, 4> thresholds{0.6, 0.9, 0.8, 0.8};
    CenterSearchOptions search;
    int n_theta = 360;
    /// Non-ring patterns score continuity/verticality vacuously when no ring
    /// is detected; Rings or unknown patterns record an error instead.
    std::optional<PatternClass> pattern;
    /// Skip the center search and use this center.
    std::optional<Point2> center;
};

struct RealismReport {
    std::string id;
    double symmetry = 0.0;
    double continuity = 0.0;
    double gap_straightness = 0.0;
    double verticality = 0.0;
    double composite = 0.0;
    Point2 center;
    std::vector<std::string> flags;
    std::vector<std::pair<std::string, std::string>> errors;  // criterion, message

    double score(Criterion c) const;
};

RealismReport realism_report(const ScatterFrame& frame, const RealismOptions& options = {});

nlohmann::json to_json(const RealismReport& r);

}  // namespace scatgate::physics
