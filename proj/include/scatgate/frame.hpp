#pragma once
/**
 * Core image and dataset types shared by every module.
 *
 * A ScatterFrame is a normalized grayscale detector frame: intensities in
 * [0,1], row-major, with an optional detector-gap mask. Frames are
 * immutable once constructed; operations return new frames.
 */

#include "scatgate/error.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scatgate {

inline constexpr int kMinFrameSide = 32;

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

class ScatterFrame {
public:
    ScatterFrame(std::string id, int width, int height, std::vector<double> intensities,
                 std::optional<std::vector<std::uint8_t>> gap_mask = std::nullopt);

    const std::string& id() const noexcept { return id_; }
    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    Point2 midpoint() const noexcept { return {(width_ - 1) / 2.0, (height_ - 1) / 2.0}; }

    double at(int x, int y) const noexcept { return pixels_[index(x, y)]; }
    std::span<const double> intensities() const noexcept { return pixels_; }

    bool has_gap_mask() const noexcept { return gap_mask_.has_value(); }
    bool is_gap(int x, int y) const noexcept {
        return gap_mask_ && (*gap_mask_)[index(x, y)] != 0;
    }
    const std::optional<std::vector<std::uint8_t>>& gap_mask() const noexcept { return gap_mask_; }

    bool contains(int x, int y) const noexcept {
        return x >= 0 && y >= 0 && x < width_ && y < height_;
    }
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    ScatterFrame with_id(std::string id) const;

    friend bool operator==(const ScatterFrame&, const ScatterFrame&) = default;

private:
    std::string id_;
    int width_;
    int height_;
    std::vector<double> pixels_;
    std::optional<std::vector<std::uint8_t>> gap_mask_;
};

enum class PatternClass { Rings, Peaks, Background };
enum class Origin { Experimental, Generated };
enum class Verdict { Realistic, Fake };
enum class LabelSource { Human, Model };

const char* to_string(PatternClass p) noexcept;
const char* to_string(Origin o) noexcept;
const char* to_string(Verdict v) noexcept;
const char* to_string(LabelSource s) noexcept;
PatternClass parse_pattern(const std::string& s);
Origin parse_origin(const std::string& s);
Verdict parse_verdict(const std::string& s);
LabelSource parse_label_source(const std::string& s);

struct ManifestEntry {
    std::string path;
    Origin origin = Origin::Generated;
    PatternClass pattern = PatternClass::Rings;
    std::optional<std::string> caption;

    /// Image id: the filename stem.
    std::string id() const;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

class DatasetManifest {
public:
    DatasetManifest() = default;
    explicit DatasetManifest(std::vector<ManifestEntry> entries);

    void add(ManifestEntry entry);
    const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const ManifestEntry* find_id(const std::string& id) const;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;

private:
    std::vector<ManifestEntry> entries_;
};

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

std::string format_timestamp(Timestamp t);
Timestamp parse_timestamp(const std::string& s);
Timestamp now_utc();

struct LabelRecord {
    std::string image_id;
    Verdict verdict = Verdict::Fake;
    LabelSource source = LabelSource::Human;
    int round = 0;
    std::string annotator;
    Timestamp timestamp{};

    friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

struct FeatureVector {
    std::vector<double> values;
    std::string extractor_id;
};

/// Two-class output of a classifier; p_realistic + p_fake == 1 within 1e-6.
class ProbabilityVector {
public:
    ProbabilityVector() = default;
    ProbabilityVector(double p_realistic, double p_fake);
    static ProbabilityVector from_realistic(double p_realistic);

    double p_realistic() const noexcept { return p_realistic_; }
    double p_fake() const noexcept { return p_fake_; }

    friend bool operator==(const ProbabilityVector&, const ProbabilityVector&) = default;

private:
    double p_realistic_ = 0.5;
    double p_fake_ = 0.5;
};

// ---------------------------------------------------------------------------
// Frame I/O and normalization

/// Loads an 8- or 16-bit single-channel PNG, dividing by the bit-depth maximum.
ScatterFrame load_frame(const std::filesystem::path& path);

void save_frame(const ScatterFrame& frame, const std::filesystem::path& path, int bit_depth = 16);

/// Gap masks travel as a sidecar 8-bit PNG (255 = gap pixel).
void save_gap_mask(const ScatterFrame& frame, const std::filesystem::path& path);
/// Loads the image and, when `mask_path` exists, attaches it as the gap mask.
ScatterFrame load_frame_with_mask(const std::filesystem::path& image_path,
                                  const std::filesystem::path& mask_path);

/// Encodes to PNG bytes in memory (8 or 16 bit).
std::vector<std::uint8_t> encode_png(const ScatterFrame& frame, int bit_depth);
/// Row-major values in [0,1] (clamped); no minimum size, for thumbnails.
std::vector<std::uint8_t> encode_png(int width, int height, std::span<const double> values, int bit_depth);

/// v -> log(1 + k v) / log(1 + k); endpoint-preserving and monotone.
ScatterFrame log_scale(const ScatterFrame& frame, double contrast = 1000.0);

/// Area-averaged resample to `side` x `side`.
std::vector<double> area_downsample(const ScatterFrame& frame, int side_x, int side_y);

}  // namespace scatgate
