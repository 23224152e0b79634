#include "scatgate/frame.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <memory>
#include <sstream>

namespace scatgate {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid_argument";
        case ErrorKind::NotFound: return "not_found";
        case ErrorKind::Io: return "io";
        case ErrorKind::Conflict: return "conflict";
        case ErrorKind::Numerical: return "numerical";
        case ErrorKind::Insufficient: return "insufficient";
    }
    return "unknown";
}

ScatterFrame::ScatterFrame(std::string id, int width, int height, std::vector<double> intensities,
                           std::optional<std::vector<std::uint8_t>> gap_mask)
    : id_(std::move(id)),
      width_(width),
      height_(height),
      pixels_(std::move(intensities)),
      gap_mask_(std::move(gap_mask)) {
    require(width_ >= kMinFrameSide && height_ >= kMinFrameSide,
            "frame must be at least 32x32, got " + std::to_string(width_) + "x" +
                std::to_string(height_));
    const auto n = static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
    require(pixels_.size() == n, "intensity buffer size does not match frame dimensions");
    for (double v : pixels_) {
        require(std::isfinite(v) && v >= 0.0 && v <= 1.0,
                "frame intensities must be finite and within [0,1]");
    }
    if (gap_mask_) require(gap_mask_->size() == n, "gap mask dimensions differ from frame");
}

ScatterFrame ScatterFrame::with_id(std::string id) const {
    ScatterFrame copy = *this;
    copy.id_ = std::move(id);
    return copy;
}

const char* to_string(PatternClass p) noexcept {
    switch (p) {
        case PatternClass::Rings: return "rings";
        case PatternClass::Peaks: return "peaks";
        case PatternClass::Background: return "background";
    }
    return "?";
}

const char* to_string(Origin o) noexcept {
    return o == Origin::Experimental ? "experimental" : "generated";
}

const char* to_string(Verdict v) noexcept { return v == Verdict::Realistic ? "realistic" : "fake"; }

const char* to_string(LabelSource s) noexcept { return s == LabelSource::Human ? "human" : "model"; }

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

PatternClass parse_pattern(const std::string& s) {
    const auto v = lower(s);
    if (v == "rings") return PatternClass::Rings;
    if (v == "peaks") return PatternClass::Peaks;
    if (v == "background") return PatternClass::Background;
    fail(ErrorKind::InvalidArgument, "unknown pattern class '" + s + "'");
}

Origin parse_origin(const std::string& s) {
    const auto v = lower(s);
    if (v == "experimental") return Origin::Experimental;
    if (v == "generated") return Origin::Generated;
    fail(ErrorKind::InvalidArgument, "unknown origin '" + s + "'");
}

Verdict parse_verdict(const std::string& s) {
    const auto v = lower(s);
    if (v == "realistic") return Verdict::Realistic;
    if (v == "fake") return Verdict::Fake;
    fail(ErrorKind::InvalidArgument, "unknown verdict '" + s + "'");
}

LabelSource parse_label_source(const std::string& s) {
    const auto v = lower(s);
    if (v == "human") return LabelSource::Human;
    if (v == "model") return LabelSource::Model;
    fail(ErrorKind::InvalidArgument, "unknown label source '" + s + "'");
}

std::string ManifestEntry::id() const { return std::filesystem::path(path).stem().string(); }

DatasetManifest::DatasetManifest(std::vector<ManifestEntry> entries) {
    for (auto& e : entries) add(std::move(e));
}

void DatasetManifest::add(ManifestEntry entry) {
    for (const auto& e : entries_) {
        require(e.path != entry.path, "duplicate manifest path '" + entry.path + "'");
    }
    entries_.push_back(std::move(entry));
}

const ManifestEntry* DatasetManifest::find_id(const std::string& id) const {
    for (const auto& e : entries_)
        if (e.id() == id) return &e;
    return nullptr;
}

std::string format_timestamp(Timestamp t) {
    const auto secs = std::chrono::floor<std::chrono::seconds>(t);
    const auto ms = (t - secs).count();
    const std::time_t tt = std::chrono::system_clock::to_time_t(secs);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

Timestamp parse_timestamp(const std::string& s) {
    std::tm tm{};
    std::istringstream in(s);
    in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
    require(!in.fail(), "malformed timestamp '" + s + "'");
    int ms = 0;
    if (in.peek() == '.') {
        in.get();
        std::string digits;
        while (std::isdigit(in.peek())) digits.push_back(static_cast<char>(in.get()));
        digits = (digits + "000").substr(0, 3);
        ms = std::stoi(digits);
    }
    const std::time_t secs = timegm(&tm);
    return std::chrono::time_point_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::from_time_t(secs)) +
           std::chrono::milliseconds(ms);
}

Timestamp now_utc() {
    return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

ProbabilityVector::ProbabilityVector(double p_realistic, double p_fake)
    : p_realistic_(p_realistic), p_fake_(p_fake) {
    require(std::isfinite(p_realistic) && std::isfinite(p_fake), "probabilities must be finite");
    require(p_realistic >= 0.0 && p_realistic <= 1.0 && p_fake >= 0.0 && p_fake <= 1.0,
            "probabilities must lie in [0,1]");
    require(std::abs(p_realistic + p_fake - 1.0) <= 1e-6, "probabilities must sum to 1");
}

ProbabilityVector ProbabilityVector::from_realistic(double p_realistic) {
    p_realistic = std::clamp(p_realistic, 0.0, 1.0);
    return {p_realistic, 1.0 - p_realistic};
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngReadGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadGuard() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriteGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteGuard() { png_destroy_write_struct(&png, &info); }
};

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) {
    throw Error(ErrorKind::Io, std::string("png: ") + msg);
}

void png_warning_fn(png_structp, png_const_charp) {}

std::vector<std::vector<std::uint8_t>> quantize_rows(int width, int height, std::span<const double> px,
                                                     int bit_depth) {
    require(bit_depth == 8 || bit_depth == 16, "bit depth must be 8 or 16");
    const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
    const int bytes = bit_depth / 8;
    std::vector<std::vector<std::uint8_t>> rows(height, std::vector<std::uint8_t>(width * bytes));
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double v = std::clamp(px[static_cast<std::size_t>(y) * width + x], 0.0, 1.0);
            const auto q = static_cast<std::uint32_t>(std::lround(v * maxv));
            if (bytes == 1) {
                rows[y][x] = static_cast<std::uint8_t>(q);
            } else {
                rows[y][2 * x] = static_cast<std::uint8_t>(q >> 8);  // PNG is big-endian
                rows[y][2 * x + 1] = static_cast<std::uint8_t>(q & 0xff);
            }
        }
    }
    return rows;
}

void write_png_common(png_structp png, png_infop info, int width, int height, int bit_depth,
                      std::vector<std::vector<std::uint8_t>>& rows) {
    png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (auto& row : rows) png_write_row(png, row.data());
    png_write_end(png, nullptr);
}

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + len);
}

void flush_noop(png_structp) {}

}  // namespace

ScatterFrame load_frame(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail(ErrorKind::NotFound, "cannot open image '" + path.string() + "'");

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        fail(ErrorKind::InvalidArgument, "not a PNG file: '" + path.string() + "'");

    PngReadGuard g;
    g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    g.info = png_create_info_struct(g.png);
    if (!g.png || !g.info) fail(ErrorKind::Io, "libpng initialization failed");
    png_init_io(g.png, fp.get());
    png_set_sig_bytes(g.png, 8);
    png_read_info(g.png, g.info);

    const int width = static_cast<int>(png_get_image_width(g.png, g.info));
    const int height = static_cast<int>(png_get_image_height(g.png, g.info));
    const int depth = png_get_bit_depth(g.png, g.info);
    const int color = png_get_color_type(g.png, g.info);
    if (color != PNG_COLOR_TYPE_GRAY)
        fail(ErrorKind::InvalidArgument,
             "'" + path.string() + "' is not single-channel grayscale (color type " +
                 std::to_string(color) + ")");
    if (depth != 8 && depth != 16)
        fail(ErrorKind::InvalidArgument,
             "unsupported bit depth " + std::to_string(depth) + " in '" + path.string() + "'");

    const std::size_t rowbytes = png_get_rowbytes(g.png, g.info);
    std::vector<std::uint8_t> row(rowbytes);
    std::vector<double> pixels(static_cast<std::size_t>(width) * height);
    const double maxv = depth == 8 ? 255.0 : 65535.0;
    for (int y = 0; y < height; ++y) {
        png_read_row(g.png, row.data(), nullptr);
        for (int x = 0; x < width; ++x) {
            const unsigned v = depth == 8 ? row[x] : (unsigned{row[2 * x]} << 8) | row[2 * x + 1];
            pixels[static_cast<std::size_t>(y) * width + x] = v / maxv;
        }
    }
    return ScatterFrame(path.stem().string(), width, height, std::move(pixels));
}

void save_frame(const ScatterFrame& frame, const std::filesystem::path& path, int bit_depth) {
    auto rows = quantize_rows(frame.width(), frame.height(), frame.intensities(), bit_depth);
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    PngWriteGuard g;
    g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    g.info = png_create_info_struct(g.png);
    if (!g.png || !g.info) fail(ErrorKind::Io, "libpng initialization failed");
    png_init_io(g.png, fp.get());
    write_png_common(g.png, g.info, frame.width(), frame.height(), bit_depth, rows);
    if (std::fflush(fp.get()) != 0) fail(ErrorKind::Io, "flush failed for '" + path.string() + "'");
}

void save_gap_mask(const ScatterFrame& frame, const std::filesystem::path& path) {
    require(frame.has_gap_mask(), "frame '" + frame.id() + "' has no gap mask");
    std::vector<double> px(frame.intensities().size());
    const auto& mask = *frame.gap_mask();
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask[i] ? 1.0 : 0.0;
    save_frame(ScatterFrame(frame.id(), frame.width(), frame.height(), std::move(px)), path, 8);
}

ScatterFrame load_frame_with_mask(const std::filesystem::path& image_path,
                                  const std::filesystem::path& mask_path) {
    ScatterFrame image = load_frame(image_path);
    if (!std::filesystem::exists(mask_path)) return image;
    const ScatterFrame mask_frame = load_frame(mask_path);
    require(mask_frame.width() == image.width() && mask_frame.height() == image.height(),
            "gap mask '" + mask_path.string() + "' does not match image dimensions");
    std::vector<std::uint8_t> mask(mask_frame.intensities().size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = mask_frame.intensities()[i] >= 0.5;
    return ScatterFrame(image.id(), image.width(), image.height(),
                        std::vector<double>(image.intensities().begin(), image.intensities().end()),
                        std::move(mask));
}

std::vector<std::uint8_t> encode_png(const ScatterFrame& frame, int bit_depth) {
    return encode_png(frame.width(), frame.height(), frame.intensities(), bit_depth);
}

std::vector<std::uint8_t> encode_png(int width, int height, std::span<const double> values, int bit_depth) {
    require(width > 0 && height > 0, "image dimensions must be positive");
    require(values.size() == static_cast<std::size_t>(width) * height, "pixel count does not match dimensions");
    auto rows = quantize_rows(width, height, values, bit_depth);
    std::vector<std::uint8_t> out;
    PngWriteGuard g;
    g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    g.info = png_create_info_struct(g.png);
    if (!g.png || !g.info) fail(ErrorKind::Io, "libpng initialization failed");
    png_set_write_fn(g.png, &out, append_bytes, flush_noop);
    write_png_common(g.png, g.info, width, height, bit_depth, rows);
    return out;
}

ScatterFrame log_scale(const ScatterFrame& frame, double contrast) {
    require(contrast > 0.0, "log_scale contrast must be positive");
    const double denom = std::log1p(contrast);
    std::vector<double> out(frame.intensities().size());
    std::transform(frame.intensities().begin(), frame.intensities().end(), out.begin(),
                   [&](double v) { return std::clamp(std::log1p(contrast * v) / denom, 0.0, 1.0); });
    return ScatterFrame(frame.id(), frame.width(), frame.height(), std::move(out), frame.gap_mask());
}

std::vector<double> area_downsample(const ScatterFrame& frame, int side_x, int side_y) {
    require(side_x > 0 && side_y > 0, "downsample side must be positive");
    std::vector<double> out(static_cast<std::size_t>(side_x) * side_y, 0.0);
    const double sx = static_cast<double>(frame.width()) / side_x;
    const double sy = static_cast<double>(frame.height()) / side_y;
    // Exact box filter: each output cell integrates the overlapping source area.
    for (int oy = 0; oy < side_y; ++oy) {
        const double y0 = oy * sy, y1 = (oy + 1) * sy;
        for (int ox = 0; ox < side_x; ++ox) {
            const double x0 = ox * sx, x1 = (ox + 1) * sx;
            double acc = 0.0;
            for (int y = static_cast<int>(y0); y < std::min<int>(frame.height(), std::ceil(y1)); ++y) {
                const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
                if (wy <= 0) continue;
                for (int x = static_cast<int>(x0); x < std::min<int>(frame.width(), std::ceil(x1)); ++x) {
                    const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
                    if (wx <= 0) continue;
                    acc += wx * wy * frame.at(x, y);
                }
            }
            out[static_cast<std::size_t>(oy) * side_x + ox] = acc / (sx * sy);
        }
    }
    return out;
}

}  // namespace scatgate
