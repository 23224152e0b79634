#include "scatgate/embed.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace scatgate::embed {

namespace {

// Averages `profile` (NaN = missing) into `bins` equal-width cells; empty cells read 0.
std::vector<double> rebin(const std::vector<double>& profile, int bins) {
    std::vector<double> out(bins, 0.0);
    const double step = static_cast<double>(profile.size()) / bins;
    for (int b = 0; b < bins; ++b) {
        const int lo = static_cast<int>(std::floor(b * step));
        const int hi = std::max(lo + 1, static_cast<int>(std::floor((b + 1) * step)));
        double sum = 0.0;
        int n = 0;
        for (int r = lo; r < hi && r < static_cast<int>(profile.size()); ++r) {
            if (std::isnan(profile[r])) continue;
            sum += profile[r];
            ++n;
        }
        if (n > 0) out[b] = sum / n;
    }
    return out;
}

std::vector<double> sector_maxima(const physics::PolarImage& polar, int bins) {
    std::vector<double> sum(bins, 0.0);
    std::vector<int> count(bins, 0);
    for (int t = 0; t < polar.n_theta; ++t) {
        double best = -1.0;
        for (int r = 0; r < polar.n_r; ++r)
            if (polar.occ(t, r)) best = std::max(best, polar.at(t, r));
        if (best < 0.0) continue;
        const int b = static_cast<int>(static_cast<long>(t) * bins / polar.n_theta);
        sum[b] += best;
        ++count[b];
    }
    for (int b = 0; b < bins; ++b) sum[b] = count[b] ? sum[b] / count[b] : 0.0;
    return sum;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::size_t FeatureConfig::length() const {
    std::size_t n = 0;
    if (radial) n += radial_bins;
    if (angular) n += angular_bins;
    if (thumb) n += static_cast<std::size_t>(thumb_side) * thumb_side;
    return n;
}

std::string FeatureConfig::extractor_id() const {
    std::string id = "handcrafted";
    if (radial) id += "-r" + std::to_string(radial_bins);
    if (angular) id += "-a" + std::to_string(angular_bins);
    if (thumb) id += "-t" + std::to_string(thumb_side);
    return id;
}

std::vector<double> FeatureNormalizer::apply(std::span<const double> raw) const {
    require(raw.size() == mean.size(), "feature length does not match the normalizer");
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - mean[i]) / scale[i];
    return out;
}

FeatureNormalizer fit_normalizer(std::span<const FeatureVector> reference) {
    require(!reference.empty(), "normalizer needs at least one reference vector", ErrorKind::Insufficient);
    const std::size_t d = reference.front().values.size();
    FeatureNormalizer norm;
    norm.mean.assign(d, 0.0);
    norm.scale.assign(d, 0.0);
    for (const auto& v : reference) {
        require(v.values.size() == d, "reference vectors differ in length");
        for (std::size_t i = 0; i < d; ++i) norm.mean[i] += v.values[i];
    }
    const double n = static_cast<double>(reference.size());
    for (auto& m : norm.mean) m /= n;
    for (const auto& v : reference)
        for (std::size_t i = 0; i < d; ++i) norm.scale[i] += (v.values[i] - norm.mean[i]) * (v.values[i] - norm.mean[i]);
    // Constant dimensions are centered but not scaled.
    for (auto& s : norm.scale) {
        s = std::sqrt(s / n);
        if (s < 1e-9) s = 1.0;
    }
    return norm;
}

Extraction extract_features(const ScatterFrame& frame, const FeatureConfig& config,
                            const FeatureNormalizer& normalizer, std::optional<Point2> center) {
    require(config.radial_bins > 0 && config.angular_bins > 0 && config.thumb_side > 0,
            "feature block sizes must be positive");
    require(config.length() > 0, "at least one feature block must be enabled");
    Extraction ex;
    ex.features.extractor_id = config.extractor_id();
    ex.center = frame.midpoint();
    if (center) {
        ex.center = *center;
    } else if (config.radial || config.angular) {
        try {
            ex.center = physics::find_center(frame, physics::fit_search_window(frame, config.search)).center;
        } catch (const Error& e) {
            ex.center_fallback = true;
            ex.warning = std::string("center search failed, using midpoint: ") + e.what();
        }
    }

    auto& values = ex.features.values;
    values.reserve(config.length());
    if (config.radial || config.angular) {
        const int n_r = std::max(8, std::min(frame.width(), frame.height()) / 2);
        const auto polar = physics::warp_polar(frame, ex.center, 360, n_r,
                                               physics::dead_pixel_mask(frame, ex.center));
        if (config.radial) {
            const auto block = rebin(physics::radial_profile(polar), config.radial_bins);
            values.insert(values.end(), block.begin(), block.end());
        }
        if (config.angular) {
            const auto block = sector_maxima(polar, config.angular_bins);
            values.insert(values.end(), block.begin(), block.end());
        }
    }
    if (config.thumb) {
        const auto block = area_downsample(frame, config.thumb_side, config.thumb_side);
        values.insert(values.end(), block.begin(), block.end());
    }
    if (!normalizer.empty()) values = normalizer.apply(values);
    return ex;
}

ProjectionModel fit_projection(std::span<const FeatureVector> features, int k) {
    require(k >= 1, "projection dimension must be at least 1");
    require(features.size() >= static_cast<std::size_t>(k) + 1,
            "projection needs at least k+1 vectors", ErrorKind::Insufficient);
    const auto d = static_cast<Eigen::Index>(features.front().values.size());
    require(k <= d, "projection dimension exceeds feature length");
    const auto n = static_cast<Eigen::Index>(features.size());

    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& v = features[i].values;
        require(static_cast<Eigen::Index>(v.size()) == d, "feature vectors differ in length");
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = v[j];
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    require(eig.info() == Eigen::Success, "covariance eigendecomposition failed", ErrorKind::Numerical);

    const Eigen::VectorXd& lambda = eig.eigenvalues();  // ascending
    const double top = std::max(lambda(d - 1), 0.0);
    double total = 0.0;
    int rank = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
        total += std::max(lambda(i), 0.0);
        if (lambda(i) > 1e-10 * top && lambda(i) > 1e-300) ++rank;
    }
    if (rank < k)
        fail(ErrorKind::Numerical, "feature matrix has rank " + std::to_string(rank) + ", fewer than the " +
                                       std::to_string(k) + " requested axes");

    ProjectionModel m;
    m.mean.assign(mean.data(), mean.data() + d);
    for (int a = 0; a < k; ++a) {
        Eigen::VectorXd axis = eig.eigenvectors().col(d - 1 - a);
        Eigen::Index arg = 0;
        axis.cwiseAbs().maxCoeff(&arg);
        if (axis(arg) < 0) axis = -axis;
        m.axes.emplace_back(axis.data(), axis.data() + d);
        m.explained_ratio.push_back(std::max(lambda(d - 1 - a), 0.0) / total);
    }
    return m;
}

std::vector<double> project(const ProjectionModel& model, std::span<const double> feature) {
    require(feature.size() == model.dim(), "feature length " + std::to_string(feature.size()) +
                                               " does not match projection dimension " +
                                               std::to_string(model.dim()));
    std::vector<double> out(model.k(), 0.0);
    for (std::size_t a = 0; a < model.k(); ++a)
        for (std::size_t j = 0; j < feature.size(); ++j) out[a] += (feature[j] - model.mean[j]) * model.axes[a][j];
    return out;
}

nlohmann::json to_json(const ProjectionModel& m) {
    return {{"mean", m.mean}, {"axes", m.axes}, {"explained_ratio", m.explained_ratio}};
}

ProjectionModel projection_from_json(const nlohmann::json& j) {
    ProjectionModel m;
    try {
        j.at("mean").get_to(m.mean);
        j.at("axes").get_to(m.axes);
        j.at("explained_ratio").get_to(m.explained_ratio);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("malformed projection model: ") + e.what());
    }
    require(m.axes.size() == m.explained_ratio.size(), "projection axes and ratios differ in count");
    for (const auto& a : m.axes) require(a.size() == m.mean.size(), "projection axis has wrong length");
    return m;
}

void write_feature_csv(std::span<const FeatureRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    const std::size_t d = rows.empty() ? 0 : rows.front().features.values.size();
    out << "id";
    for (std::size_t i = 0; i < d; ++i) out << ",f" << i;
    out << '\n';
    char buf[32];
    for (const auto& row : rows) {
        require(row.features.values.size() == d, "feature rows differ in length");
        require(row.id.find(',') == std::string::npos, "image id contains a comma: " + row.id);
        out << row.id;
        for (double v : row.features.values) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path, const std::string& extractor_id) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::NotFound, "cannot open feature file " + path.string());
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::InvalidArgument, path.string() + ": empty feature file");
    const auto header = split_csv_line(line);
    require(!header.empty() && header.front() == "id", path.string() + ": header must start with 'id'");
    const std::size_t d = header.size() - 1;

    std::vector<FeatureRow> rows;
    std::set<std::string> seen;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        require(cells.size() == d + 1, where + ": expected " + std::to_string(d + 1) + " columns");
        require(seen.insert(cells[0]).second, where + ": duplicate id " + cells[0]);
        FeatureRow row{cells[0], {{}, extractor_id}};
        row.features.values.reserve(d);
        for (std::size_t i = 1; i <= d; ++i) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cells[i], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            require(used == cells[i].size() && used > 0 && std::isfinite(v),
                    where + ": not a finite number: '" + cells[i] + "'");
            row.features.values.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<FeatureVector> vectors_of(std::span<const FeatureRow> rows) {
    std::vector<FeatureVector> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.features);
    return out;
}

}  // namespace scatgate::embed
