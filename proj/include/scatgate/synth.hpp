#pragma once
/**
 * Synthetic scattering frames and controlled hallucination corruptions.
 *
 * Rings: Gaussian radial ridges around a sub-pixel center. Peaks: Gaussian
 * windows in radius and azimuth. Background: constant level with beamstop
 * and gaps. Each corruption kind breaks exactly one realism criterion, which
 * gives every physics score a positive control.
 *
 * Pixel (x, y) sits at integer coordinates; azimuth is atan2(y - cy, x - cx)
 * in degrees, image rows pointing down.
 */

#include "scatgate/frame.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scatgate::synth {

enum class BandOrientation { Row, Column };

/// Axis-aligned detector gap: `width` rows (Row) or columns (Column) from `start`.
struct GapBand {
    BandOrientation orientation = BandOrientation::Row;
    int start = 0;
    int width = 0;
};

struct Ring {
    double radius = 0.0;
    double sigma = 1.0;
    double amplitude = 1.0;
};

struct RingSpec {
    Point2 center;
    std::vector<Ring> rings;
    double beamstop_radius = 0.0;
    std::vector<GapBand> gap_bands;
    double background_level = 0.0;
    double noise_sigma = 0.0;
};

struct Peak {
    double radius = 0.0;
    double azimuth_deg = 0.0;
    double angular_sigma_deg = 5.0;
    double radial_sigma = 2.0;
    double amplitude = 1.0;
};

struct PeakSpec {
    Point2 center;
    std::vector<Peak> peaks;
    bool symmetry_pairs = true;
    double beamstop_radius = 0.0;
    std::vector<GapBand> gap_bands;
    double background_level = 0.0;
    double noise_sigma = 0.0;
};

struct FrameSize {
    int width = 512;
    int height = 512;
};

enum class CorruptionKind { BrokenArc, AzimuthalShear, AsymmetricIntensity, WavyGap, GhostTexture };

inline constexpr CorruptionKind kAllCorruptions[] = {
    CorruptionKind::BrokenArc, CorruptionKind::AzimuthalShear, CorruptionKind::AsymmetricIntensity,
    CorruptionKind::WavyGap, CorruptionKind::GhostTexture};

const char* to_string(CorruptionKind k) noexcept;
CorruptionKind parse_corruption(const std::string& s);

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::BrokenArc;
    double magnitude = 0.5;  // (0, 1]
    std::uint64_t seed = 0;
    // Geometry hints. Without them the frame midpoint and the strongest
    // radial-profile maximum are used.
    std::optional<Point2> center;
    std::optional<double> ring_radius;
    double arc_half_width = 10.0;  // radial half-width of the BrokenArc cut, px
};

void validate(const RingSpec& spec, FrameSize size);
void validate(const PeakSpec& spec, FrameSize size);

/// Deterministic given (spec, seed). Beamstop and gap pixels read exactly 0.
ScatterFrame generate_rings(const RingSpec& spec, FrameSize size, std::uint64_t seed,
                            std::string id = "rings");
ScatterFrame generate_peaks(const PeakSpec& spec, FrameSize size, std::uint64_t seed,
                            std::string id = "peaks");
ScatterFrame generate_background(const RingSpec& spec, FrameSize size, std::uint64_t seed,
                                 std::string id = "background");

ScatterFrame corrupt(const ScatterFrame& frame, const CorruptionSpec& spec);

// ---------------------------------------------------------------------------
// Corpus generation

struct PatternCounts {
    int experimental = 0;  // clean frames tagged with Experimental origin
    int clean = 0;
    int corrupted = 0;
};

struct CorpusConfig {
    FrameSize size{256, 256};
    std::map<PatternClass, PatternCounts> counts;
    double magnitude_min = 0.3;
    double magnitude_max = 1.0;
    std::vector<CorruptionKind> kinds{std::begin(kAllCorruptions), std::end(kAllCorruptions)};
    double noise_min = 0.0;
    double noise_max = 0.01;
    double center_jitter = 20.0;  // max |offset| of the true center from the midpoint, px
    double gap_probability = 0.6;
    int bit_depth = 16;
};

/// Reads the TOML corpus configuration (see README for keys).
CorpusConfig load_corpus_config(const std::filesystem::path& path);
CorpusConfig parse_corpus_config(const std::string& toml_text);

/// Ground truth for one generated frame (persisted to truth.jsonl).
struct FrameTruth {
    std::string id;
    PatternClass pattern = PatternClass::Rings;
    Origin origin = Origin::Generated;
    Verdict verdict = Verdict::Realistic;
    std::uint64_t seed = 0;
    std::optional<RingSpec> ring_spec;  // rings and background frames
    std::optional<PeakSpec> peak_spec;
    std::optional<CorruptionSpec> corruption;
    Point2 center() const;
};

nlohmann::json to_json(const FrameTruth& t);
FrameTruth truth_from_json(const nlohmann::json& j);
std::vector<FrameTruth> read_truth(const std::filesystem::path& path);

struct GeneratedItem {
    ScatterFrame frame;
    ManifestEntry entry;
    LabelRecord label;
    FrameTruth truth;
};

/// In-memory corpus; item i depends only on (seed, pattern, slot), never on
/// generation order.
std::vector<GeneratedItem> generate_items(const CorpusConfig& config, std::uint64_t seed);

struct Corpus {
    DatasetManifest manifest;
    std::vector<LabelRecord> labels;
    std::vector<FrameTruth> truth;
};

/// Loads a corpus image together with its masks/<id>.png sidecar, if any.
ScatterFrame load_corpus_frame(const std::filesystem::path& corpus_dir, const ManifestEntry& entry);

/// Writes images/*.png, masks/*.png, manifest.jsonl, labels.jsonl and
/// truth.jsonl under `out_dir`.
Corpus generate_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir,
                       std::uint64_t seed);

/// Random clean ring spec used by tests and the corpus generator.
RingSpec random_ring_spec(FrameSize size, std::uint64_t seed, double center_jitter,
                          double noise_sigma, bool with_gaps);
PeakSpec random_peak_spec(FrameSize size, std::uint64_t seed, double center_jitter,
                          double noise_sigma, bool with_gaps);

}  // namespace scatgate::synth
