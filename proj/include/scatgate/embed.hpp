#pragma once
/**
 * Handcrafted frame features and a linear (PCA) projection for 2-D layouts.
 *
 * Three blocks: the angular-mean radial profile, the per-sector radial
 * maximum (an angular occupancy histogram) and an area-averaged thumbnail.
 */

#include "scatgate/frame.hpp"
#include "scatgate/physics.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scatgate::embed {

struct FeatureConfig {
    int radial_bins = 64;
    int angular_bins = 36;
    int thumb_side = 16;
    bool radial = true;
    bool angular = true;
    bool thumb = true;
    physics::CenterSearchOptions search;

    std::size_t length() const;
    /// Stable identifier recorded with every vector, e.g. "handcrafted-r64-a36-t16".
    std::string extractor_id() const;
};

/// Per-dimension z-normalization fitted on a reference set.
struct FeatureNormalizer {
    std::vector<double> mean;
    std::vector<double> scale;

    bool empty() const noexcept { return mean.empty(); }
    std::vector<double> apply(std::span<const double> raw) const;
};

FeatureNormalizer fit_normalizer(std::span<const FeatureVector> reference);

struct Extraction {
    FeatureVector features;
    Point2 center;
    bool center_fallback = false;  // center search failed, midpoint used
    std::string warning;
};

/// Raw (unnormalized) blocks when `normalizer` is empty. `center` skips the search.
Extraction extract_features(const ScatterFrame& frame, const FeatureConfig& config = {},
                            const FeatureNormalizer& normalizer = {},
                            std::optional<Point2> center = std::nullopt);

struct ProjectionModel {
    std::vector<double> mean;
    std::vector<std::vector<double>> axes;  // k unit vectors of length d
    std::vector<double> explained_ratio;    // per axis, non-increasing

    std::size_t dim() const noexcept { return mean.size(); }
    std::size_t k() const noexcept { return axes.size(); }
};

/// PCA on the centered feature matrix. k may range over 1..d.
ProjectionModel fit_projection(std::span<const FeatureVector> features, int k);
std::vector<double> project(const ProjectionModel& model, std::span<const double> feature);

nlohmann::json to_json(const ProjectionModel& m);
ProjectionModel projection_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// CSV persistence: header "id,f0,f1,...", one row per image.

struct FeatureRow {
    std::string id;
    FeatureVector features;
};

void write_feature_csv(std::span<const FeatureRow> rows, const std::filesystem::path& path);
std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path,
                                         const std::string& extractor_id = "external");

std::vector<FeatureVector> vectors_of(std::span<const FeatureRow> rows);

}  // namespace scatgate::embed
