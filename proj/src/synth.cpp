#include "scatgate/synth.hpp"

#include "scatgate/rng.hpp"
#include "scatgate/store.hpp"
#include "scatgate/toml_lite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace scatgate::synth {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_deg(double a) {
    a = std::fmod(a, 360.0);
    if (a < 0) a += 360.0;
    return a;
}

/// Signed angular difference in (-180, 180].
double angle_diff_deg(double a, double b) {
    double d = wrap_deg(a - b);
    if (d > 180.0) d -= 360.0;
    return d;
}

double azimuth_deg(double dx, double dy) { return wrap_deg(std::atan2(dy, dx) * 180.0 / kPi); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return splitmix64(splitmix64(splitmix64(seed ^ splitmix64(a)) ^ b) ^ c);
}

void validate_common(Point2 center, double beamstop, const std::vector<GapBand>& gaps,
                     double background, double noise, FrameSize size) {
    require(size.width >= kMinFrameSide && size.height >= kMinFrameSide, "frame size below 32x32");
    require(center.x >= 0 && center.y >= 0 && center.x <= size.width - 1 && center.y <= size.height - 1,
            "pattern center must lie inside the frame");
    require(beamstop >= 0.0, "beamstop radius must be non-negative");
    require(background >= 0.0 && background <= 0.2, "background level must be within [0, 0.2]");
    require(noise >= 0.0, "noise sigma must be non-negative");
    for (const auto& g : gaps) {
        const int extent = g.orientation == BandOrientation::Row ? size.height : size.width;
        require(g.width > 0 && g.start >= 0 && g.start + g.width <= extent,
                "gap band outside the frame");
    }
}

struct Canvas {
    int width;
    int height;
    std::vector<double> pixels;
    std::vector<std::uint8_t> mask;

    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& gap(int x, int y) { return mask[static_cast<std::size_t>(y) * width + x]; }
};

/// Adds noise, clamps, then zeroes the beamstop disk and gap bands.
ScatterFrame finish(std::string id, FrameSize size, std::vector<double> pixels, Point2 center,
                    double beamstop, const std::vector<GapBand>& gaps, double noise,
                    std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& v : pixels) {
        if (noise > 0.0) v += noise * gauss(rng);
        v = std::clamp(v, 0.0, 1.0);
    }
    for (int y = 0; y < size.height; ++y)
        for (int x = 0; x < size.width; ++x)
            if (std::hypot(x - center.x, y - center.y) < beamstop)
                pixels[static_cast<std::size_t>(y) * size.width + x] = 0.0;

    std::optional<std::vector<std::uint8_t>> mask;
    if (!gaps.empty()) {
        mask.emplace(pixels.size(), 0);
        for (const auto& g : gaps) {
            for (int k = g.start; k < g.start + g.width; ++k) {
                if (g.orientation == BandOrientation::Row) {
                    for (int x = 0; x < size.width; ++x) {
                        const auto i = static_cast<std::size_t>(k) * size.width + x;
                        pixels[i] = 0.0;
                        (*mask)[i] = 1;
                    }
                } else {
                    for (int y = 0; y < size.height; ++y) {
                        const auto i = static_cast<std::size_t>(y) * size.width + k;
                        pixels[i] = 0.0;
                        (*mask)[i] = 1;
                    }
                }
            }
        }
    }
    return ScatterFrame(std::move(id), size.width, size.height, std::move(pixels), std::move(mask));
}

double bilinear(const ScatterFrame& f, double x, double y) {
    x = std::clamp(x, 0.0, f.width() - 1.0);
    y = std::clamp(y, 0.0, f.height() - 1.0);
    const int x0 = std::min(static_cast<int>(x), f.width() - 2);
    const int y0 = std::min(static_cast<int>(y), f.height() - 2);
    const double fx = x - x0, fy = y - y0;
    return (1 - fx) * (1 - fy) * f.at(x0, y0) + fx * (1 - fy) * f.at(x0 + 1, y0) +
           (1 - fx) * fy * f.at(x0, y0 + 1) + fx * fy * f.at(x0 + 1, y0 + 1);
}

/// Radius of the strongest angular-mean maximum about `c` (beyond r = 3).
double strongest_ring_radius(const ScatterFrame& f, Point2 c) {
    const int rmax = static_cast<int>(std::hypot(f.width(), f.height())) + 1;
    std::vector<double> sum(rmax + 1, 0.0);
    std::vector<int> cnt(rmax + 1, 0);
    for (int y = 0; y < f.height(); ++y)
        for (int x = 0; x < f.width(); ++x) {
            const int r = static_cast<int>(std::lround(std::hypot(x - c.x, y - c.y)));
            sum[r] += f.at(x, y);
            ++cnt[r];
        }
    double best = -1.0;
    int best_r = 3;
    for (int r = 3; r <= rmax; ++r) {
        if (cnt[r] == 0) continue;
        const double m = sum[r] / cnt[r];
        if (m > best) {
            best = m;
            best_r = r;
        }
    }
    return best_r;
}

enum class HalfPlane { Below, Above, Right, Left };

bool in_half(HalfPlane h, double dx, double dy) {
    switch (h) {
        case HalfPlane::Below: return dy > 0;
        case HalfPlane::Above: return dy < 0;
        case HalfPlane::Right: return dx > 0;
        case HalfPlane::Left: return dx < 0;
    }
    return false;
}

Canvas to_canvas(const ScatterFrame& f) {
    Canvas c{f.width(), f.height(), std::vector<double>(f.intensities().begin(), f.intensities().end()),
             f.gap_mask().value_or(std::vector<std::uint8_t>(f.intensities().size(), 0))};
    return c;
}

ScatterFrame from_canvas(const ScatterFrame& like, Canvas c) {
    for (auto& v : c.pixels) v = std::clamp(v, 0.0, 1.0);
    std::optional<std::vector<std::uint8_t>> mask;
    if (like.has_gap_mask()) mask = std::move(c.mask);
    return ScatterFrame(like.id(), c.width, c.height, std::move(c.pixels), std::move(mask));
}

ScatterFrame broken_arc(const ScatterFrame& f, const CorruptionSpec& s, Point2 center, double radius,
                        std::mt19937_64& rng) {
    const double width = s.magnitude * 180.0;
    const double start = std::uniform_real_distribution<double>(0.0, 360.0)(rng);
    // Keep the cut clear of the beamstop so it cannot merge with it.
    const double half_width = std::min(s.arc_half_width, 0.4 * radius);
    Canvas c = to_canvas(f);
    for (int y = 0; y < c.height; ++y)
        for (int x = 0; x < c.width; ++x) {
            const double dx = x - center.x, dy = y - center.y;
            if (std::abs(std::hypot(dx, dy) - radius) > half_width) continue;
            if (wrap_deg(azimuth_deg(dx, dy) - start) < width) c.at(x, y) = 0.0;
        }
    return from_canvas(f, std::move(c));
}

// Rotates one half-plane about a pivot on the dividing line, kShearPivot px
// from the center. Ridges in that half move radially by up to kShearPivot*alpha,
// which stays inside the verticality ridge window even at magnitude 1.
constexpr double kShearPivot = 12.0;

ScatterFrame azimuthal_shear(const ScatterFrame& f, const CorruptionSpec& s, Point2 center,
                             std::mt19937_64& rng) {
    const auto half = static_cast<HalfPlane>(std::uniform_int_distribution<int>(0, 3)(rng));
    const double sign = std::uniform_int_distribution<int>(0, 1)(rng) ? 1.0 : -1.0;
    const double alpha = sign * s.magnitude * 20.0 * kPi / 180.0;
    const double side = std::uniform_int_distribution<int>(0, 1)(rng) ? 1.0 : -1.0;
    Point2 pivot = center;
    switch (half) {
        case HalfPlane::Below:
        case HalfPlane::Above: pivot.x += side * kShearPivot; break;
        case HalfPlane::Right:
        case HalfPlane::Left: pivot.y += side * kShearPivot; break;
    }
    const double ca = std::cos(-alpha), sa = std::sin(-alpha);
    Canvas c = to_canvas(f);
    for (int y = 0; y < c.height; ++y)
        for (int x = 0; x < c.width; ++x) {
            if (!in_half(half, x - center.x, y - center.y)) continue;
            const double px = x - pivot.x, py = y - pivot.y;
            const double sx = pivot.x + ca * px - sa * py;
            const double sy = pivot.y + sa * px + ca * py;
            c.at(x, y) = f.is_gap(x, y) ? 0.0 : bilinear(f, sx, sy);
        }
    return from_canvas(f, std::move(c));
}

ScatterFrame asymmetric_intensity(const ScatterFrame& f, const CorruptionSpec& s, Point2 center,
                                  std::mt19937_64& rng) {
    const auto half = static_cast<HalfPlane>(std::uniform_int_distribution<int>(0, 3)(rng));
    Canvas c = to_canvas(f);
    for (int y = 0; y < c.height; ++y)
        for (int x = 0; x < c.width; ++x)
            if (in_half(half, x - center.x, y - center.y)) c.at(x, y) *= (1.0 - s.magnitude);
    return from_canvas(f, std::move(c));
}

std::vector<std::pair<int, int>> full_runs(const std::vector<int>& counts, int extent) {
    std::vector<std::pair<int, int>> runs;  // [start, end)
    int start = -1;
    for (int i = 0; i <= static_cast<int>(counts.size()); ++i) {
        const bool full = i < static_cast<int>(counts.size()) && counts[i] >= 0.8 * extent;
        if (full && start < 0) start = i;
        if (!full && start >= 0) {
            runs.emplace_back(start, i);
            start = -1;
        }
    }
    return runs;
}

ScatterFrame wavy_gap(const ScatterFrame& f, const CorruptionSpec& s, std::mt19937_64& rng) {
    if (!f.has_gap_mask())
        fail(ErrorKind::InvalidArgument, "WavyGap requires a frame with a gap mask");
    Canvas c = to_canvas(f);
    std::vector<int> row_count(c.height, 0), col_count(c.width, 0);
    for (int y = 0; y < c.height; ++y)
        for (int x = 0; x < c.width; ++x)
            if (c.gap(x, y)) {
                ++row_count[y];
                ++col_count[x];
            }
    const auto row_bands = full_runs(row_count, c.width);
    const auto col_bands = full_runs(col_count, c.height);
    if (row_bands.empty() && col_bands.empty())
        fail(ErrorKind::InvalidArgument, "WavyGap found no gap bands in the mask");

    std::vector<std::uint8_t> in_row_band(c.height, 0), in_col_band(c.width, 0);
    for (auto [a, b] : row_bands)
        for (int y = a; y < b; ++y) in_row_band[y] = 1;
    for (auto [a, b] : col_bands)
        for (int x = a; x < b; ++x) in_col_band[x] = 1;

    const double amplitude = s.magnitude * 8.0;
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * kPi);

    for (auto [r0, r1] : row_bands) {
        const double period = c.width / 3.0;
        const double phase = phase_dist(rng);
        for (int x = 0; x < c.width; ++x) {
            if (in_col_band[x]) continue;
            const double above = r0 > 0 ? c.at(x, r0 - 1) : (r1 < c.height ? c.at(x, r1) : 0.0);
            const double below = r1 < c.height ? c.at(x, r1) : above;
            for (int y = r0; y < r1; ++y) {
                const double t = (y - r0 + 1.0) / (r1 - r0 + 1.0);
                c.at(x, y) = (1 - t) * above + t * below;
                c.gap(x, y) = 0;
            }
            const int d = static_cast<int>(std::lround(amplitude * std::sin(2 * kPi * x / period + phase)));
            for (int y = r0 + d; y < r1 + d; ++y) {
                if (y < 0 || y >= c.height) continue;
                c.at(x, y) = 0.0;
                c.gap(x, y) = 1;
            }
        }
    }
    for (auto [c0, c1] : col_bands) {
        const double period = c.height / 3.0;
        const double phase = phase_dist(rng);
        for (int y = 0; y < c.height; ++y) {
            if (in_row_band[y]) continue;
            const double left = c0 > 0 ? c.at(c0 - 1, y) : (c1 < c.width ? c.at(c1, y) : 0.0);
            const double right = c1 < c.width ? c.at(c1, y) : left;
            for (int x = c0; x < c1; ++x) {
                const double t = (x - c0 + 1.0) / (c1 - c0 + 1.0);
                c.at(x, y) = (1 - t) * left + t * right;
                c.gap(x, y) = 0;
            }
            const int d = static_cast<int>(std::lround(amplitude * std::sin(2 * kPi * y / period + phase)));
            for (int x = c0 + d; x < c1 + d; ++x) {
                if (x < 0 || x >= c.width) continue;
                c.at(x, y) = 0.0;
                c.gap(x, y) = 1;
            }
        }
    }
    return from_canvas(f, std::move(c));
}

std::vector<double> gaussian_blur(const std::vector<double>& src, int w, int h, double sigma) {
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) ksum += kernel[i + radius] = std::exp(-i * i / (2 * sigma * sigma));
    for (auto& k : kernel) k /= ksum;
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * src[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    return out;
}

ScatterFrame ghost_texture(const ScatterFrame& f, const CorruptionSpec& s, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> noise(f.intensities().size());
    for (auto& v : noise) v = gauss(rng);
    auto texture = gaussian_blur(noise, f.width(), f.height(), 3.0);
    const auto [lo, hi] = std::minmax_element(texture.begin(), texture.end());
    const double lov = *lo, span = std::max(*hi - *lo, 1e-12);
    Canvas c = to_canvas(f);
    for (int y = 0; y < c.height; ++y)
        for (int x = 0; x < c.width; ++x) {
            double& v = c.at(x, y);
            if (v == 0.0 || c.gap(x, y)) continue;  // dead pixels stay dead
            const double t = (texture[static_cast<std::size_t>(y) * c.width + x] - lov) / span;
            v = (1.0 - s.magnitude) * v + s.magnitude * t;
        }
    return from_canvas(f, std::move(c));
}

json point_json(Point2 p) { return json::array({p.x, p.y}); }
Point2 point_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json gaps_json(const std::vector<GapBand>& gaps) {
    json arr = json::array();
    for (const auto& g : gaps)
        arr.push_back({{"orientation", g.orientation == BandOrientation::Row ? "row" : "column"},
                       {"start", g.start},
                       {"width", g.width}});
    return arr;
}

std::vector<GapBand> gaps_from(const json& j) {
    std::vector<GapBand> out;
    for (const auto& g : j)
        out.push_back({g.at("orientation").get<std::string>() == "row" ? BandOrientation::Row
                                                                       : BandOrientation::Column,
                       g.at("start").get<int>(), g.at("width").get<int>()});
    return out;
}

std::vector<GapBand> random_gaps(FrameSize size, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> width_dist(3, 6);
    std::uniform_real_distribution<double> pos(0.2, 0.8);
    std::vector<GapBand> gaps;
    const int which = std::uniform_int_distribution<int>(0, 2)(rng);  // row, column, both
    if (which != 1) {
        const int w = width_dist(rng);
        gaps.push_back({BandOrientation::Row, static_cast<int>(pos(rng) * (size.height - w)), w});
    }
    if (which != 0) {
        const int w = width_dist(rng);
        gaps.push_back({BandOrientation::Column, static_cast<int>(pos(rng) * (size.width - w)), w});
    }
    return gaps;
}

}  // namespace

const char* to_string(CorruptionKind k) noexcept {
    switch (k) {
        case CorruptionKind::BrokenArc: return "BrokenArc";
        case CorruptionKind::AzimuthalShear: return "AzimuthalShear";
        case CorruptionKind::AsymmetricIntensity: return "AsymmetricIntensity";
        case CorruptionKind::WavyGap: return "WavyGap";
        case CorruptionKind::GhostTexture: return "GhostTexture";
    }
    return "?";
}

CorruptionKind parse_corruption(const std::string& s) {
    for (auto k : kAllCorruptions)
        if (s == to_string(k)) return k;
    fail(ErrorKind::InvalidArgument, "unknown corruption kind '" + s + "'");
}

void validate(const RingSpec& spec, FrameSize size) {
    validate_common(spec.center, spec.beamstop_radius, spec.gap_bands, spec.background_level,
                    spec.noise_sigma, size);
    const double half_diag = 0.5 * std::hypot(size.width, size.height);
    for (const auto& r : spec.rings) {
        require(r.radius > 0.0 && r.radius < half_diag, "ring radius must be in (0, half diagonal)");
        require(r.sigma > 0.0, "ring sigma must be positive");
        require(r.amplitude > 0.0 && r.amplitude <= 1.0, "ring amplitude must be in (0, 1]");
        require(spec.beamstop_radius < r.radius, "beamstop radius must be below every ring radius");
    }
}

void validate(const PeakSpec& spec, FrameSize size) {
    validate_common(spec.center, spec.beamstop_radius, spec.gap_bands, spec.background_level,
                    spec.noise_sigma, size);
    const double half_diag = 0.5 * std::hypot(size.width, size.height);
    for (const auto& p : spec.peaks) {
        require(p.radius > 0.0 && p.radius < half_diag, "peak radius must be in (0, half diagonal)");
        require(p.azimuth_deg >= 0.0 && p.azimuth_deg < 360.0, "peak azimuth must be in [0, 360)");
        require(p.angular_sigma_deg > 0.0 && p.radial_sigma > 0.0, "peak widths must be positive");
        require(p.amplitude > 0.0 && p.amplitude <= 1.0, "peak amplitude must be in (0, 1]");
        require(spec.beamstop_radius < p.radius, "beamstop radius must be below every peak radius");
    }
}

ScatterFrame generate_rings(const RingSpec& spec, FrameSize size, std::uint64_t seed, std::string id) {
    validate(spec, size);
    std::vector<double> px(static_cast<std::size_t>(size.width) * size.height);
    for (int y = 0; y < size.height; ++y)
        for (int x = 0; x < size.width; ++x) {
            const double d = std::hypot(x - spec.center.x, y - spec.center.y);
            double v = spec.background_level;
            for (const auto& r : spec.rings) {
                const double u = d - r.radius;
                v += r.amplitude * std::exp(-u * u / (2 * r.sigma * r.sigma));
            }
            px[static_cast<std::size_t>(y) * size.width + x] = v;
        }
    return finish(std::move(id), size, std::move(px), spec.center, spec.beamstop_radius, spec.gap_bands,
                  spec.noise_sigma, seed);
}

ScatterFrame generate_peaks(const PeakSpec& spec, FrameSize size, std::uint64_t seed, std::string id) {
    validate(spec, size);
    std::vector<double> px(static_cast<std::size_t>(size.width) * size.height);
    for (int y = 0; y < size.height; ++y)
        for (int x = 0; x < size.width; ++x) {
            const double dx = x - spec.center.x, dy = y - spec.center.y;
            const double d = std::hypot(dx, dy);
            const double az = azimuth_deg(dx, dy);
            double v = spec.background_level;
            for (const auto& p : spec.peaks) {
                const double u = d - p.radius;
                const double radial = std::exp(-u * u / (2 * p.radial_sigma * p.radial_sigma));
                const double s2 = 2 * p.angular_sigma_deg * p.angular_sigma_deg;
                const double a = angle_diff_deg(az, p.azimuth_deg);
                double angular = std::exp(-a * a / s2);
                if (spec.symmetry_pairs) {
                    const double b = angle_diff_deg(az, p.azimuth_deg + 180.0);
                    angular += std::exp(-b * b / s2);
                }
                v += p.amplitude * radial * angular;
            }
            px[static_cast<std::size_t>(y) * size.width + x] = v;
        }
    return finish(std::move(id), size, std::move(px), spec.center, spec.beamstop_radius, spec.gap_bands,
                  spec.noise_sigma, seed);
}

ScatterFrame generate_background(const RingSpec& spec, FrameSize size, std::uint64_t seed, std::string id) {
    require(spec.rings.empty(), "background frames take a ring spec without rings");
    return generate_rings(spec, size, seed, std::move(id));
}

ScatterFrame corrupt(const ScatterFrame& frame, const CorruptionSpec& spec) {
    require(spec.magnitude > 0.0 && spec.magnitude <= 1.0, "corruption magnitude must be in (0, 1]");
    std::mt19937_64 rng(spec.seed);
    const Point2 center = spec.center.value_or(frame.midpoint());
    switch (spec.kind) {
        case CorruptionKind::BrokenArc: {
            const double radius = spec.ring_radius.value_or(strongest_ring_radius(frame, center));
            return broken_arc(frame, spec, center, radius, rng);
        }
        case CorruptionKind::AzimuthalShear: return azimuthal_shear(frame, spec, center, rng);
        case CorruptionKind::AsymmetricIntensity: return asymmetric_intensity(frame, spec, center, rng);
        case CorruptionKind::WavyGap: return wavy_gap(frame, spec, rng);
        case CorruptionKind::GhostTexture: return ghost_texture(frame, spec, rng);
    }
    fail(ErrorKind::InvalidArgument, "unknown corruption kind");
}

// ---------------------------------------------------------------------------

RingSpec random_ring_spec(FrameSize size, std::uint64_t seed, double center_jitter, double noise_sigma,
                          bool with_gaps) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double side = std::min(size.width, size.height);
    RingSpec s;
    const Point2 mid{(size.width - 1) / 2.0, (size.height - 1) / 2.0};
    s.center = {mid.x + (2 * unit(rng) - 1) * center_jitter, mid.y + (2 * unit(rng) - 1) * center_jitter};
    const int n_rings = std::uniform_int_distribution<int>(1, 3)(rng);
    // Radii on a jittered ladder keep rings at least 0.09*side apart.
    const double r_lo = 0.16 * side, r_hi = 0.44 * side;
    const double step = (r_hi - r_lo) / 3.0;
    std::vector<int> slots{0, 1, 2};
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(n_rings);
    std::sort(slots.begin(), slots.end());
    for (int slot : slots) {
        Ring r;
        r.radius = r_lo + step * (slot + 0.2 + 0.6 * unit(rng));
        r.sigma = 1.5 + 1.5 * unit(rng);
        r.amplitude = 0.35 + 0.6 * unit(rng);
        s.rings.push_back(r);
    }
    s.beamstop_radius = std::min(0.06 * side, s.rings.front().radius - 8.0);
    s.background_level = 0.01 + 0.04 * unit(rng);
    s.noise_sigma = noise_sigma;
    if (with_gaps) s.gap_bands = random_gaps(size, rng);
    return s;
}

PeakSpec random_peak_spec(FrameSize size, std::uint64_t seed, double center_jitter, double noise_sigma,
                          bool with_gaps) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double side = std::min(size.width, size.height);
    PeakSpec s;
    const Point2 mid{(size.width - 1) / 2.0, (size.height - 1) / 2.0};
    s.center = {mid.x + (2 * unit(rng) - 1) * center_jitter, mid.y + (2 * unit(rng) - 1) * center_jitter};
    const int n = std::uniform_int_distribution<int>(2, 4)(rng);
    for (int i = 0; i < n; ++i) {
        Peak p;
        p.radius = (0.16 + 0.26 * unit(rng)) * side;
        p.azimuth_deg = 360.0 * unit(rng);
        if (p.azimuth_deg >= 360.0) p.azimuth_deg = 0.0;
        p.angular_sigma_deg = 3.0 + 5.0 * unit(rng);
        p.radial_sigma = 1.5 + 1.5 * unit(rng);
        p.amplitude = 0.35 + 0.6 * unit(rng);
        s.peaks.push_back(p);
    }
    double min_r = s.peaks.front().radius;
    for (const auto& p : s.peaks) min_r = std::min(min_r, p.radius);
    s.beamstop_radius = std::min(0.06 * side, min_r - 8.0);
    s.symmetry_pairs = true;
    s.background_level = 0.01 + 0.04 * unit(rng);
    s.noise_sigma = noise_sigma;
    if (with_gaps) s.gap_bands = random_gaps(size, rng);
    return s;
}

Point2 FrameTruth::center() const {
    if (ring_spec) return ring_spec->center;
    if (peak_spec) return peak_spec->center;
    return {};
}

json to_json(const FrameTruth& t) {
    json j{{"id", t.id},
           {"pattern", to_string(t.pattern)},
           {"origin", to_string(t.origin)},
           {"verdict", to_string(t.verdict)},
           {"seed", t.seed},
           {"center", point_json(t.center())}};
    if (t.ring_spec) {
        const auto& s = *t.ring_spec;
        json rings = json::array();
        for (const auto& r : s.rings)
            rings.push_back({{"radius", r.radius}, {"sigma", r.sigma}, {"amplitude", r.amplitude}});
        j["ring_spec"] = {{"center", point_json(s.center)},
                          {"rings", rings},
                          {"beamstop_radius", s.beamstop_radius},
                          {"gap_bands", gaps_json(s.gap_bands)},
                          {"background_level", s.background_level},
                          {"noise_sigma", s.noise_sigma}};
    }
    if (t.peak_spec) {
        const auto& s = *t.peak_spec;
        json peaks = json::array();
        for (const auto& p : s.peaks)
            peaks.push_back({{"radius", p.radius},
                             {"azimuth_deg", p.azimuth_deg},
                             {"angular_sigma_deg", p.angular_sigma_deg},
                             {"radial_sigma", p.radial_sigma},
                             {"amplitude", p.amplitude}});
        j["peak_spec"] = {{"center", point_json(s.center)},
                          {"peaks", peaks},
                          {"symmetry_pairs", s.symmetry_pairs},
                          {"beamstop_radius", s.beamstop_radius},
                          {"gap_bands", gaps_json(s.gap_bands)},
                          {"background_level", s.background_level},
                          {"noise_sigma", s.noise_sigma}};
    }
    if (t.corruption) {
        const auto& c = *t.corruption;
        j["corruption"] = {{"kind", to_string(c.kind)}, {"magnitude", c.magnitude}, {"seed", c.seed}};
        if (c.ring_radius) j["corruption"]["ring_radius"] = *c.ring_radius;
    } else {
        j["corruption"] = nullptr;
    }
    return j;
}

FrameTruth truth_from_json(const json& j) {
    FrameTruth t;
    t.id = j.at("id").get<std::string>();
    t.pattern = parse_pattern(j.at("pattern").get<std::string>());
    t.origin = parse_origin(j.at("origin").get<std::string>());
    t.verdict = parse_verdict(j.at("verdict").get<std::string>());
    t.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("ring_spec")) {
        const auto& r = j["ring_spec"];
        RingSpec s;
        s.center = point_from(r.at("center"));
        for (const auto& ring : r.at("rings"))
            s.rings.push_back({ring.at("radius").get<double>(), ring.at("sigma").get<double>(),
                               ring.at("amplitude").get<double>()});
        s.beamstop_radius = r.at("beamstop_radius").get<double>();
        s.gap_bands = gaps_from(r.at("gap_bands"));
        s.background_level = r.at("background_level").get<double>();
        s.noise_sigma = r.at("noise_sigma").get<double>();
        t.ring_spec = s;
    }
    if (j.contains("peak_spec")) {
        const auto& r = j["peak_spec"];
        PeakSpec s;
        s.center = point_from(r.at("center"));
        for (const auto& p : r.at("peaks"))
            s.peaks.push_back({p.at("radius").get<double>(), p.at("azimuth_deg").get<double>(),
                               p.at("angular_sigma_deg").get<double>(), p.at("radial_sigma").get<double>(),
                               p.at("amplitude").get<double>()});
        s.symmetry_pairs = r.at("symmetry_pairs").get<bool>();
        s.beamstop_radius = r.at("beamstop_radius").get<double>();
        s.gap_bands = gaps_from(r.at("gap_bands"));
        s.background_level = r.at("background_level").get<double>();
        s.noise_sigma = r.at("noise_sigma").get<double>();
        t.peak_spec = s;
    }
    if (j.contains("corruption") && !j["corruption"].is_null()) {
        const auto& c = j["corruption"];
        CorruptionSpec cs;
        cs.kind = parse_corruption(c.at("kind").get<std::string>());
        cs.magnitude = c.at("magnitude").get<double>();
        cs.seed = c.at("seed").get<std::uint64_t>();
        cs.center = t.center();
        if (c.contains("ring_radius")) cs.ring_radius = c["ring_radius"].get<double>();
        t.corruption = cs;
    }
    return t;
}

ScatterFrame load_corpus_frame(const std::filesystem::path& corpus_dir, const ManifestEntry& entry) {
    return load_frame_with_mask(corpus_dir / entry.path, corpus_dir / "masks" / (entry.id() + ".png"));
}

std::vector<FrameTruth> read_truth(const std::filesystem::path& path) {
    std::vector<FrameTruth> out;
    for (const auto& row : read_jsonl(path)) out.push_back(truth_from_json(row));
    return out;
}

CorpusConfig parse_corpus_config(const std::string& toml_text) {
    const json t = config::parse_toml(toml_text);
    CorpusConfig c;
    c.size.width = t.value("width", c.size.width);
    c.size.height = t.value("height", c.size.height);
    c.bit_depth = t.value("bit_depth", c.bit_depth);
    c.magnitude_min = t.value("magnitude_min", c.magnitude_min);
    c.magnitude_max = t.value("magnitude_max", c.magnitude_max);
    c.noise_min = t.value("noise_min", c.noise_min);
    c.noise_max = t.value("noise_max", c.noise_max);
    c.center_jitter = t.value("center_jitter", c.center_jitter);
    c.gap_probability = t.value("gap_probability", c.gap_probability);
    if (t.contains("kinds")) {
        c.kinds.clear();
        for (const auto& k : t["kinds"]) c.kinds.push_back(parse_corruption(k.get<std::string>()));
    }
    if (t.contains("counts")) {
        for (const auto& [name, counts] : t["counts"].items()) {
            PatternCounts pc;
            pc.experimental = counts.value("experimental", 0);
            pc.clean = counts.value("clean", 0);
            pc.corrupted = counts.value("corrupted", 0);
            require(pc.experimental >= 0 && pc.clean >= 0 && pc.corrupted >= 0,
                    "corpus counts must be non-negative");
            c.counts[parse_pattern(name)] = pc;
        }
    }
    require(c.size.width >= kMinFrameSide && c.size.height >= kMinFrameSide,
            "frame size must be at least " + std::to_string(kMinFrameSide) + "x" + std::to_string(kMinFrameSide));
    require(c.center_jitter >= 0.0, "center_jitter must be non-negative");
    require(c.gap_probability >= 0.0 && c.gap_probability <= 1.0, "gap_probability must lie in [0,1]");
    require(c.magnitude_min > 0.0 && c.magnitude_min <= c.magnitude_max && c.magnitude_max <= 1.0,
            "corruption magnitudes must satisfy 0 < min <= max <= 1");
    require(c.noise_min >= 0.0 && c.noise_min <= c.noise_max, "noise range invalid");
    require(c.bit_depth == 8 || c.bit_depth == 16, "bit_depth must be 8 or 16");
    require(!c.kinds.empty(), "at least one corruption kind is required");
    return c;
}

CorpusConfig load_corpus_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::NotFound, "cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_corpus_config(ss.str());
}

std::vector<GeneratedItem> generate_items(const CorpusConfig& config, std::uint64_t seed) {
    std::vector<GeneratedItem> items;
    std::set<std::string> ids;
    for (const auto& [pattern, counts] : config.counts) {
        const std::pair<int, int> categories[] = {{0, counts.experimental}, {1, counts.clean}, {2, counts.corrupted}};
        for (auto [category, count] : categories) {
            for (int i = 0; i < count; ++i) {
                const std::uint64_t item_seed =
                    mix_seed(seed, static_cast<std::uint64_t>(pattern) + 1, category + 1, i);
                std::mt19937_64 rng(item_seed);
                std::uniform_real_distribution<double> unit(0.0, 1.0);
                const bool corrupted = category == 2;

                std::vector<CorruptionKind> applicable;
                for (auto k : config.kinds) {
                    if (k == CorruptionKind::BrokenArc && pattern != PatternClass::Rings) continue;
                    if (k == CorruptionKind::AzimuthalShear && pattern == PatternClass::Background) continue;
                    applicable.push_back(k);
                }
                if (corrupted && applicable.empty())
                    fail(ErrorKind::InvalidArgument,
                         std::string("no configured corruption applies to pattern ") + to_string(pattern));
                std::optional<CorruptionKind> kind;
                if (corrupted)
                    kind = applicable[std::uniform_int_distribution<std::size_t>(0, applicable.size() - 1)(rng)];

                const double noise = config.noise_min + (config.noise_max - config.noise_min) * unit(rng);
                const bool gaps = unit(rng) < config.gap_probability || kind == CorruptionKind::WavyGap;
                const std::uint64_t spec_seed = rng();
                const std::uint64_t noise_seed = rng();

                char idbuf[32];
                std::snprintf(idbuf, sizeof idbuf, "%s_%08llx", to_string(pattern),
                              static_cast<unsigned long long>(item_seed & 0xffffffffULL));
                std::string id = idbuf;
                require(ids.insert(id).second, "corpus id collision for '" + id + "'");

                FrameTruth truth;
                truth.id = id;
                truth.pattern = pattern;
                truth.origin = category == 0 ? Origin::Experimental : Origin::Generated;
                truth.verdict = corrupted ? Verdict::Fake : Verdict::Realistic;
                truth.seed = noise_seed;

                std::optional<ScatterFrame> frame;
                switch (pattern) {
                    case PatternClass::Rings: {
                        auto s = random_ring_spec(config.size, spec_seed, config.center_jitter, noise, gaps);
                        frame = generate_rings(s, config.size, noise_seed, id);
                        truth.ring_spec = s;
                        break;
                    }
                    case PatternClass::Peaks: {
                        auto s = random_peak_spec(config.size, spec_seed, config.center_jitter, noise, gaps);
                        frame = generate_peaks(s, config.size, noise_seed, id);
                        truth.peak_spec = s;
                        break;
                    }
                    case PatternClass::Background: {
                        auto s = random_ring_spec(config.size, spec_seed, config.center_jitter, noise, gaps);
                        s.rings.clear();
                        frame = generate_background(s, config.size, noise_seed, id);
                        truth.ring_spec = s;
                        break;
                    }
                }
                if (kind) {
                    CorruptionSpec cs;
                    cs.kind = *kind;
                    cs.magnitude = config.magnitude_min + (config.magnitude_max - config.magnitude_min) * unit(rng);
                    cs.seed = rng();
                    cs.center = truth.center();
                    if (truth.ring_spec && !truth.ring_spec->rings.empty()) {
                        const auto& rings = truth.ring_spec->rings;
                        cs.ring_radius =
                            rings[std::uniform_int_distribution<std::size_t>(0, rings.size() - 1)(rng)].radius;
                    }
                    frame = corrupt(*frame, cs);
                    truth.corruption = cs;
                }

                ManifestEntry entry;
                entry.path = "images/" + id + ".png";
                entry.origin = truth.origin;
                entry.pattern = pattern;

                LabelRecord label;
                label.image_id = id;
                label.verdict = truth.verdict;
                label.source = LabelSource::Human;
                label.round = 0;
                label.annotator = "oracle";
                label.timestamp = Timestamp{};

                items.push_back({std::move(*frame), std::move(entry), std::move(label), std::move(truth)});
            }
        }
    }
    return items;
}

Corpus generate_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir, std::uint64_t seed) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (!ec) fs::create_directories(out_dir / "masks", ec);
    if (ec) fail(ErrorKind::Io, "cannot create corpus directories under '" + out_dir.string() + "': " + ec.message());

    Corpus corpus;
    std::vector<json> labels, truth;
    for (auto& item : generate_items(config, seed)) {
        save_frame(item.frame, out_dir / item.entry.path, config.bit_depth);
        if (item.frame.has_gap_mask()) save_gap_mask(item.frame, out_dir / "masks" / (item.entry.id() + ".png"));
        corpus.manifest.add(item.entry);
        labels.push_back(to_json(item.label));
        truth.push_back(to_json(item.truth));
        corpus.labels.push_back(std::move(item.label));
        corpus.truth.push_back(std::move(item.truth));
    }
    write_manifest(corpus.manifest, out_dir / "manifest.jsonl");
    write_jsonl(labels, out_dir / "labels.jsonl");
    write_jsonl(truth, out_dir / "truth.jsonl");
    return corpus;
}

}  // namespace scatgate::synth
