#include "scatgate/physics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

namespace scatgate::physics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZeroLevel = 0.0;

std::vector<std::uint8_t> gap_only_mask(const ScatterFrame& frame) {
    if (frame.has_gap_mask()) return *frame.gap_mask();
    return std::vector<std::uint8_t>(frame.intensities().size(), 0);
}

int default_search_radius(const ScatterFrame& frame, const CenterSearchOptions& o) {
    if (o.n_r > 0) return o.n_r;
    return std::min(frame.width(), frame.height()) / 2 + static_cast<int>(o.window);
}

int default_report_radius(const ScatterFrame& frame, Point2 c) {
    double r = 0.0;
    for (double x : {0.0, frame.width() - 1.0})
        for (double y : {0.0, frame.height() - 1.0}) r = std::max(r, std::hypot(x - c.x, y - c.y));
    return static_cast<int>(std::ceil(r)) + 1;
}

double median(std::vector<double> v) {
    if (v.empty()) return kNaN;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

double population_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

// Share of the polar-sample variance explained by radius alone. The plain
// profile variance is fooled by candidates sitting on a bright ring, whose
// first few radial bins are uniformly bright.
double radial_sharpness(const PolarImage& polar) {
    const auto profile = radial_profile(polar);
    double sum = 0.0, sumsq = 0.0, between = 0.0;
    long n = 0;
    std::vector<long> counts(polar.n_r, 0);
    for (int t = 0; t < polar.n_theta; ++t)
        for (int r = 0; r < polar.n_r; ++r) {
            if (std::isnan(profile[r]) || !polar.occ(t, r)) continue;
            const double v = polar.at(t, r);
            sum += v;
            sumsq += v * v;
            ++counts[r];
            ++n;
        }
    if (n < 2) return 0.0;
    const double mean = sum / n;
    const double total = sumsq / n - mean * mean;
    if (total <= 1e-12) return 0.0;
    for (int r = 0; r < polar.n_r; ++r)
        if (counts[r] > 0) between += counts[r] * (profile[r] - mean) * (profile[r] - mean);
    return std::clamp(between / n / total, 0.0, 1.0);
}

std::vector<int> resolve_radii(const PolarImage& polar, std::span<const int> ring_radii) {
    std::vector<int> radii(ring_radii.begin(), ring_radii.end());
    if (radii.empty()) radii = detect_ring_radii(polar);
    if (radii.empty()) fail(ErrorKind::Insufficient, "no detectable rings");
    for (int r : radii) require(r >= 0 && r < polar.n_r, "ring radius outside the polar grid");
    return radii;
}

// --- gap detection ---------------------------------------------------------

struct Track {
    double last_center = 0.0;
    int last_pos = 0;
    std::vector<std::pair<double, double>> points;  // (position along band, center across band)
};

constexpr int kMaxBandWidth = 24;
constexpr double kTrackTolerance = 3.0;
constexpr int kTrackMaxSkip = 16;

/// Tracks gap runs along `length` lines of `depth` cells each; cell(i, k) is
/// the candidate flag at line i, depth k.
template <typename Cell>
std::vector<Track> track_bands(int length, int depth, Cell cell) {
    std::vector<int> counts(length, 0);
    for (int i = 0; i < length; ++i)
        for (int k = 0; k < depth; ++k) counts[i] += cell(i, k) ? 1 : 0;

    int evaluable = 0;
    std::vector<Track> tracks;
    for (int i = 0; i < length; ++i) {
        if (counts[i] >= depth / 2) continue;  // crossed by a perpendicular band
        ++evaluable;
        std::vector<double> centers;
        for (int k = 0; k < depth;) {
            if (!cell(i, k)) {
                ++k;
                continue;
            }
            int end = k;
            while (end < depth && cell(i, end)) ++end;
            if (end - k <= kMaxBandWidth) centers.push_back(0.5 * (k + end - 1));
            k = end;
        }
        std::vector<char> taken(centers.size(), 0);
        for (auto& t : tracks) {
            if (i - t.last_pos > kTrackMaxSkip) continue;
            int best = -1;
            double best_d = kTrackTolerance;
            for (std::size_t c = 0; c < centers.size(); ++c) {
                const double d = std::abs(centers[c] - t.last_center);
                if (!taken[c] && d <= best_d) {
                    best_d = d;
                    best = static_cast<int>(c);
                }
            }
            if (best >= 0) {
                taken[best] = 1;
                t.last_center = centers[best];
                t.last_pos = i;
                t.points.emplace_back(i, centers[best]);
            }
        }
        for (std::size_t c = 0; c < centers.size(); ++c)
            if (!taken[c]) tracks.push_back({centers[c], i, {{static_cast<double>(i), centers[c]}}});
    }
    std::vector<Track> gaps;
    for (auto& t : tracks)
        if (evaluable > 0 && static_cast<double>(t.points.size()) >= 0.8 * evaluable) gaps.push_back(std::move(t));
    return gaps;
}

double line_fit_rms(const std::vector<std::pair<double, double>>& pts) {
    const double n = static_cast<double>(pts.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto [x, y] : pts) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double denom = n * sxx - sx * sx;
    const double slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
    const double intercept = (sy - slope * sx) / n;
    double ss = 0.0;
    for (auto [x, y] : pts) {
        const double r = y - (intercept + slope * x);
        ss += r * r;
    }
    return std::sqrt(ss / n);
}

}  // namespace

std::vector<std::uint8_t> dead_pixel_mask(const ScatterFrame& frame, Point2 near) {
    const int w = frame.width(), h = frame.height();
    std::vector<std::uint8_t> dead = gap_only_mask(frame);

    auto is_zero = [&](int x, int y) { return !frame.is_gap(x, y) && frame.at(x, y) <= kZeroLevel; };
    std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
    constexpr double kReach = 4.0;
    const int x_lo = std::max(0, static_cast<int>(std::floor(near.x - kReach)));
    const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(near.x + kReach)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(near.y - kReach)));
    const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(near.y + kReach)));

    int next_label = 0;
    std::vector<std::pair<int, int>> stack, members;
    for (int sy = y_lo; sy <= y_hi; ++sy)
        for (int sx = x_lo; sx <= x_hi; ++sx) {
            if (std::hypot(sx - near.x, sy - near.y) > kReach) continue;
            if (!is_zero(sx, sy) || label[frame.index(sx, sy)] >= 0) continue;
            const int id = next_label++;
            bool touches_border = false;
            members.clear();
            stack.assign(1, {sx, sy});
            label[frame.index(sx, sy)] = id;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                members.emplace_back(x, y);
                if (x == 0 || y == 0 || x == w - 1 || y == h - 1) touches_border = true;
                constexpr int dx[] = {1, -1, 0, 0};
                constexpr int dy[] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int nx = x + dx[k], ny = y + dy[k];
                    if (!frame.contains(nx, ny) || !is_zero(nx, ny)) continue;
                    auto& l = label[frame.index(nx, ny)];
                    if (l >= 0) continue;
                    l = id;
                    stack.emplace_back(nx, ny);
                }
            }
            if (touches_border) continue;
            for (auto [x, y] : members) dead[frame.index(x, y)] = 1;
        }
    return dead;
}

PolarImage warp_polar(const ScatterFrame& frame, Point2 center, int n_theta, int n_r) {
    return warp_polar(frame, center, n_theta, n_r, dead_pixel_mask(frame, center));
}

PolarImage warp_polar(const ScatterFrame& frame, Point2 center, int n_theta, int n_r,
                      std::span<const std::uint8_t> dead) {
    if (n_r == 0) n_r = std::min(frame.width(), frame.height()) / 2;
    require(n_theta >= 8 && n_r >= 8, "polar grid needs at least 8 angular and 8 radial bins");
    require(center.x >= 0 && center.y >= 0 && center.x <= frame.width() - 1 && center.y <= frame.height() - 1,
            "polar center must lie inside the frame");
    require(dead.size() == frame.intensities().size(), "dead-pixel mask size mismatch");

    PolarImage p;
    p.n_theta = n_theta;
    p.n_r = n_r;
    p.center = center;
    p.max_radius = n_r - 1;
    p.values.assign(static_cast<std::size_t>(n_theta) * n_r, 0.0);
    p.occupied.assign(p.values.size(), 0);

    const int w = frame.width(), h = frame.height();
    const auto px = frame.intensities();
    for (int t = 0; t < n_theta; ++t) {
        const double theta = 2.0 * std::numbers::pi * t / n_theta;
        const double ct = std::cos(theta), st = std::sin(theta);
        for (int r = 0; r < n_r; ++r) {
            const double x = center.x + r * ct, y = center.y + r * st;
            if (x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0) continue;
            const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
            const double fx = x - x0, fy = y - y0;
            const int x1 = fx > 0.0 ? x0 + 1 : x0;
            const int y1 = fy > 0.0 ? y0 + 1 : y0;
            const std::size_t i00 = static_cast<std::size_t>(y0) * w + x0, i10 = static_cast<std::size_t>(y0) * w + x1,
                              i01 = static_cast<std::size_t>(y1) * w + x0, i11 = static_cast<std::size_t>(y1) * w + x1;
            if (dead[i00] || dead[i10] || dead[i01] || dead[i11]) continue;
            const std::size_t k = static_cast<std::size_t>(t) * n_r + r;
            p.values[k] = (1 - fx) * (1 - fy) * px[i00] + fx * (1 - fy) * px[i10] + (1 - fx) * fy * px[i01] +
                          fx * fy * px[i11];
            p.occupied[k] = 1;
        }
    }
    return p;
}

std::vector<double> radial_profile(const PolarImage& polar) {
    std::vector<double> profile(polar.n_r, kNaN);
    const int min_count = std::max(1, polar.n_theta / 10);
    for (int r = 0; r < polar.n_r; ++r) {
        double sum = 0.0;
        int n = 0;
        for (int t = 0; t < polar.n_theta; ++t) {
            if (!polar.occ(t, r)) continue;
            sum += polar.at(t, r);
            ++n;
        }
        if (n >= min_count) profile[r] = sum / n;
    }
    return profile;
}

double center_objective(const ScatterFrame& frame, Point2 center, const CenterSearchOptions& options) {
    const auto dead = gap_only_mask(frame);
    return radial_sharpness(warp_polar(frame, center, options.n_theta, default_search_radius(frame, options), dead));
}

CenterSearchOptions fit_search_window(const ScatterFrame& frame, CenterSearchOptions options) {
    const Point2 mid = frame.midpoint();
    const double room = std::min({std::round(mid.x), std::round(mid.y), frame.width() - 1 - std::round(mid.x),
                                  frame.height() - 1 - std::round(mid.y)});
    options.window = std::clamp(options.window, 0.0, room);
    return options;
}

CenterResult find_center(const ScatterFrame& frame, const CenterSearchOptions& options) {
    require(options.coarse_step >= 1, "coarse step must be at least 1 px");
    require(options.window >= 0.0, "search window must be non-negative");
    const Point2 mid = frame.midpoint();
    const double ox = std::round(mid.x), oy = std::round(mid.y);
    require(ox - options.window >= 0 && oy - options.window >= 0 && ox + options.window <= frame.width() - 1 &&
                oy + options.window <= frame.height() - 1,
            "center search window exceeds the frame");

    const auto dead = gap_only_mask(frame);
    const int n_r = default_search_radius(frame, options);
    std::map<std::pair<long, long>, double> cache;  // keyed in quarter pixels
    auto objective = [&](double cx, double cy) {
        const std::pair<long, long> key{std::lround(cx * 4), std::lround(cy * 4)};
        if (auto it = cache.find(key); it != cache.end()) return it->second;
        const double v = radial_sharpness(warp_polar(frame, {cx, cy}, options.n_theta, n_r, dead));
        cache.emplace(key, v);
        return v;
    };
    auto inside = [&](double cx, double cy) {
        return std::abs(cx - ox) <= options.window + 1e-9 && std::abs(cy - oy) <= options.window + 1e-9;
    };

    const int half_steps = static_cast<int>(std::floor(options.window / options.coarse_step));
    double best_x = ox, best_y = oy, best = -1.0;
    for (int j = -half_steps; j <= half_steps; ++j)
        for (int i = -half_steps; i <= half_steps; ++i) {
            const double cx = ox + i * options.coarse_step, cy = oy + j * options.coarse_step;
            const double v = objective(cx, cy);
            if (v > best) {
                best = v;
                best_x = cx;
                best_y = cy;
            }
        }
    const double cx0 = best_x, cy0 = best_y;
    for (int j = -options.coarse_step; j <= options.coarse_step; ++j)
        for (int i = -options.coarse_step; i <= options.coarse_step; ++i) {
            const double cx = cx0 + i, cy = cy0 + j;
            if (!inside(cx, cy)) continue;
            const double v = objective(cx, cy);
            if (v > best) {
                best = v;
                best_x = cx;
                best_y = cy;
            }
        }
    if (best <= 1e-12) fail(ErrorKind::Numerical, "no radial structure: frame has no ring-like profile");

    auto vertex = [](double fm, double f0, double fp) {
        const double denom = fm - 2.0 * f0 + fp;
        if (denom >= 0.0) return 0.0;
        const double off = std::clamp(0.5 * (fm - fp) / denom, -0.5, 0.5);
        return std::round(off * 4.0) / 4.0;
    };
    double dx = 0.0, dy = 0.0;
    if (inside(best_x - 1, best_y) && inside(best_x + 1, best_y))
        dx = vertex(objective(best_x - 1, best_y), best, objective(best_x + 1, best_y));
    if (inside(best_x, best_y - 1) && inside(best_x, best_y + 1))
        dy = vertex(objective(best_x, best_y - 1), best, objective(best_x, best_y + 1));
    if (dx != 0.0 || dy != 0.0) {
        const double v = objective(best_x + dx, best_y + dy);
        if (v >= best) return {{best_x + dx, best_y + dy}, v};
    }
    return {{best_x, best_y}, best};
}

std::vector<int> detect_ring_radii(const PolarImage& polar, double min_prominence) {
    const auto p = radial_profile(polar);
    const int n = static_cast<int>(p.size());
    std::vector<int> out;
    for (int r = 1; r + 1 < n; ++r) {
        if (std::isnan(p[r]) || std::isnan(p[r - 1]) || std::isnan(p[r + 1])) continue;
        if (!(p[r] > p[r - 1] && p[r] >= p[r + 1])) continue;
        double left_min = p[r];
        for (int k = r - 1; k >= 0 && !std::isnan(p[k]) && p[k] <= p[r]; --k) left_min = std::min(left_min, p[k]);
        double right_min = p[r];
        for (int k = r + 1; k < n && !std::isnan(p[k]) && p[k] <= p[r]; ++k) right_min = std::min(right_min, p[k]);
        if (p[r] - std::max(left_min, right_min) >= min_prominence) out.push_back(r);
    }
    return out;
}

std::vector<double> ridge_positions(const PolarImage& polar, int radius, int half_window) {
    std::vector<double> pos(polar.n_theta, kNaN);
    const int lo = std::max(0, radius - half_window), hi = std::min(polar.n_r - 1, radius + half_window);
    for (int t = 0; t < polar.n_theta; ++t) {
        int best = -1;
        double best_v = -1.0, min_v = std::numeric_limits<double>::infinity();
        bool partial = false;
        for (int r = lo; r <= hi; ++r) {
            if (!polar.occ(t, r)) {
                partial = true;
                break;
            }
            const double v = polar.at(t, r);
            min_v = std::min(min_v, v);
            if (v > best_v) {
                best_v = v;
                best = r;
            }
        }
        // A partly masked window can hide the ridge behind a gap.
        if (partial || best < 0 || best_v - min_v < 1e-12) continue;
        double offset = 0.0;
        if (best > lo && best < hi && polar.occ(t, best - 1) && polar.occ(t, best + 1)) {
            const double a = polar.at(t, best - 1), b = best_v, c = polar.at(t, best + 1);
            const double denom = a - 2.0 * b + c;
            if (denom < 0.0) offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
        }
        pos[t] = best + offset;
    }
    return pos;
}

double symmetry_score(const PolarImage& polar) {
    require(polar.n_theta % 2 == 0, "symmetry score needs an even number of angular bins");
    const int half = polar.n_theta / 2;
    double acc = 0.0;
    long used = 0;
    const long total = static_cast<long>(half) * polar.n_r;
    for (int t = 0; t < half; ++t)
        for (int r = 0; r < polar.n_r; ++r) {
            if (!polar.occ(t, r) || !polar.occ(t + half, r)) continue;
            const double a = polar.at(t, r), b = polar.at(t + half, r);
            acc += 1.0 - std::abs(a - b) / (a + b + kSymmetryEpsilon);
            ++used;
        }
    if (used < 0.1 * static_cast<double>(total))
        fail(ErrorKind::Insufficient, "insufficient coverage: fewer than 10% of symmetric pairs occupied");
    return std::clamp(acc / static_cast<double>(used), 0.0, 1.0);
}

double continuity_score(const PolarImage& polar, std::span<const int> ring_radii) {
    const auto radii = resolve_radii(polar, ring_radii);
    double total = 0.0;
    int rings = 0;
    for (int r : radii) {
        std::vector<double> ridge;
        for (int t = 0; t < polar.n_theta; ++t) {
            if (!polar.occ(t, r)) continue;
            double v = polar.at(t, r);
            for (int k : {r - 1, r + 1})
                if (k >= 0 && k < polar.n_r && polar.occ(t, k)) v = std::max(v, polar.at(t, k));
            ridge.push_back(v);
        }
        if (ridge.empty()) continue;
        const double half_median = 0.5 * median(ridge);
        std::size_t kept = 0;
        if (half_median > 0.0)
            kept = static_cast<std::size_t>(std::count_if(ridge.begin(), ridge.end(),
                                                          [&](double v) { return v >= half_median; }));
        total += static_cast<double>(kept) / static_cast<double>(ridge.size());
        ++rings;
    }
    if (rings == 0) fail(ErrorKind::Insufficient, "no occupied samples on any ring");
    return total / rings;
}

double verticality_score(const PolarImage& polar, std::span<const int> ring_radii) {
    const auto radii = resolve_radii(polar, ring_radii);
    double total = 0.0;
    int rings = 0;
    for (int r : radii) {
        std::vector<double> valid;
        for (double p : ridge_positions(polar, r, 5))
            if (!std::isnan(p)) valid.push_back(p);
        if (valid.size() < 2) continue;
        total += std::exp(-population_std(valid) / kVerticalityScale);
        ++rings;
    }
    if (rings == 0) fail(ErrorKind::Insufficient, "no ridge found on any ring");
    return total / rings;
}

double gap_straightness(const ScatterFrame& frame) {
    const int w = frame.width(), h = frame.height();
    auto candidate = [&](int x, int y) {
        return frame.has_gap_mask() ? frame.is_gap(x, y) : frame.at(x, y) <= 1e-6;
    };
    // Row-like gaps are tracked column by column and vice versa.
    auto rows = track_bands(w, h, [&](int i, int k) { return candidate(i, k); });
    auto cols = track_bands(h, w, [&](int i, int k) { return candidate(k, i); });
    double total = 0.0;
    int n = 0;
    for (const auto* set : {&rows, &cols})
        for (const auto& t : *set) {
            total += std::exp(-line_fit_rms(t.points) / kGapResidualScale);
            ++n;
        }
    return n == 0 ? 1.0 : total / n;
}

double RealismReport::score(Criterion c) const {
    switch (c) {
        case Criterion::Symmetry: return symmetry;
        case Criterion::Continuity: return continuity;
        case Criterion::GapStraightness: return gap_straightness;
        case Criterion::Verticality: return verticality;
    }
    return 0.0;
}

RealismReport realism_report(const ScatterFrame& frame, const RealismOptions& options) {
    double wsum = 0.0;
    for (double w : options.weights) {
        require(w >= 0.0, "realism weights must be non-negative");
        wsum += w;
    }
    require(std::abs(wsum - 1.0) <= 1e-9, "realism weights must sum to 1");

    RealismReport rep;
    rep.id = frame.id();
    rep.center = frame.midpoint();
    if (options.center) {
        rep.center = *options.center;
    } else {
        try {
            rep.center = find_center(frame, fit_search_window(frame, options.search)).center;
        } catch (const Error& e) {
            rep.errors.emplace_back("center", e.what());
        }
    }

    const PolarImage polar = warp_polar(frame, rep.center, options.n_theta,
                                        default_report_radius(frame, rep.center),
                                        dead_pixel_mask(frame, rep.center));
    auto guarded = [&](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const Error& e) {
            rep.errors.emplace_back(name, e.what());
            return 0.0;
        }
    };
    rep.symmetry = guarded("symmetry", [&] { return symmetry_score(polar); });
    const auto radii = detect_ring_radii(polar);
    if (radii.empty() && options.pattern && *options.pattern != PatternClass::Rings) {
        rep.continuity = 1.0;
        rep.verticality = 1.0;
    } else {
        rep.continuity = guarded("continuity", [&] { return continuity_score(polar, radii); });
        rep.verticality = guarded("verticality", [&] { return verticality_score(polar, radii); });
    }
    rep.gap_straightness = gap_straightness(frame);

    for (int i = 0; i < 4; ++i) {
        const double s = rep.score(static_cast<Criterion>(i));
        rep.composite += options.weights[i] * s;
        if (s < options.thresholds[i]) rep.flags.emplace_back(kCriterionNames[i]);
    }
    rep.composite = std::clamp(rep.composite, 0.0, 1.0);
    return rep;
}

nlohmann::json to_json(const RealismReport& r) {
    nlohmann::json errors = nlohmann::json::object();
    for (const auto& [k, v] : r.errors) errors[k] = v;
    return {{"id", r.id},
            {"symmetry", r.symmetry},
            {"continuity", r.continuity},
            {"gap_straightness", r.gap_straightness},
            {"verticality", r.verticality},
            {"composite", r.composite},
            {"center", {r.center.x, r.center.y}},
            {"flags", r.flags},
            {"errors", errors}};
}

}  // namespace scatgate::physics
