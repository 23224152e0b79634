#include "scatgate/store.hpp"

#include <fstream>

namespace scatgate {

using nlohmann::json;

json to_json(const ManifestEntry& e) {
    json j{{"path", e.path}, {"origin", to_string(e.origin)}, {"pattern", to_string(e.pattern)}};
    j["caption"] = e.caption ? json(*e.caption) : json(nullptr);
    return j;
}

ManifestEntry manifest_entry_from_json(const json& j) {
    ManifestEntry e;
    e.path = j.at("path").get<std::string>();
    e.origin = parse_origin(j.at("origin").get<std::string>());
    e.pattern = parse_pattern(j.at("pattern").get<std::string>());
    if (j.contains("caption") && !j["caption"].is_null()) e.caption = j["caption"].get<std::string>();
    return e;
}

json to_json(const LabelRecord& r) {
    return json{{"image_id", r.image_id},
                {"verdict", to_string(r.verdict)},
                {"source", to_string(r.source)},
                {"round", r.round},
                {"annotator", r.annotator},
                {"timestamp", format_timestamp(r.timestamp)}};
}

LabelRecord label_from_json(const json& j) {
    LabelRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.verdict = parse_verdict(j.at("verdict").get<std::string>());
    r.source = parse_label_source(j.at("source").get<std::string>());
    r.round = j.at("round").get<int>();
    require(r.round >= 0, "label round must be non-negative");
    r.annotator = j.value("annotator", "");
    r.timestamp = parse_timestamp(j.at("timestamp").get<std::string>());
    return r;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::NotFound, "cannot open '" + path.string() + "'");
    std::vector<json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            fail(ErrorKind::InvalidArgument,
                 path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

void write_jsonl(const std::vector<json>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    for (const auto& r : rows) out << r.dump() << '\n';
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::vector<json> rows;
    rows.reserve(manifest.size());
    for (const auto& e : manifest.entries()) rows.push_back(to_json(e));
    write_jsonl(rows, path);
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    DatasetManifest m;
    for (const auto& row : read_jsonl(path)) m.add(manifest_entry_from_json(row));
    return m;
}

// ---------------------------------------------------------------------------

LabelStore::LabelStore(std::filesystem::path backing_file) {
    if (std::filesystem::exists(backing_file)) {
        for (const auto& row : read_jsonl(backing_file)) {
            auto rec = label_from_json(row);
            require(!(rec.source == LabelSource::Human && has_human(rec.image_id, rec.round)),
                    "label store contains duplicate human verdict for '" + rec.image_id + "'",
                    ErrorKind::Conflict);
            by_image_.emplace(rec.image_id, records_.size());
            records_.push_back(std::move(rec));
        }
    }
    backing_ = std::move(backing_file);
}

void LabelStore::append(const LabelRecord& record) {
    require(record.round >= 0, "label round must be non-negative");
    if (record.source == LabelSource::Human && has_human(record.image_id, record.round))
        fail(ErrorKind::Conflict, "image '" + record.image_id + "' already has a human verdict in round " +
                                      std::to_string(record.round));
    if (backing_) {
        std::ofstream out(*backing_, std::ios::app);
        if (!out) fail(ErrorKind::Io, "cannot append to '" + backing_->string() + "'");
        out << to_json(record).dump() << '\n';
        out.flush();
        if (!out) fail(ErrorKind::Io, "append failed for '" + backing_->string() + "'");
    }
    by_image_.emplace(record.image_id, records_.size());
    records_.push_back(record);
}

void LabelStore::append_all(const std::vector<LabelRecord>& records) {
    for (const auto& r : records) append(r);
}

bool LabelStore::has_human(const std::string& image_id, int round) const {
    auto [lo, hi] = by_image_.equal_range(image_id);
    for (auto it = lo; it != hi; ++it) {
        const auto& r = records_[it->second];
        if (r.source == LabelSource::Human && r.round == round) return true;
    }
    return false;
}

std::optional<LabelRecord> LabelStore::effective(const std::string& image_id) const {
    std::optional<LabelRecord> best;
    auto [lo, hi] = by_image_.equal_range(image_id);
    for (auto it = lo; it != hi; ++it) {
        const auto& r = records_[it->second];
        if (!best || r.round > best->round ||
            (r.round == best->round &&
             (r.source == LabelSource::Human || best->source == LabelSource::Model)))
            best = r;
    }
    return best;
}

std::optional<LabelRecord> LabelStore::latest_human(const std::string& image_id) const {
    std::optional<LabelRecord> best;
    auto [lo, hi] = by_image_.equal_range(image_id);
    for (auto it = lo; it != hi; ++it) {
        const auto& r = records_[it->second];
        if (r.source != LabelSource::Human) continue;
        if (!best || r.round >= best->round) best = r;
    }
    return best;
}

std::vector<LabelRecord> LabelStore::history(const std::string& image_id) const {
    std::vector<LabelRecord> out;
    auto [lo, hi] = by_image_.equal_range(image_id);
    for (auto it = lo; it != hi; ++it) out.push_back(records_[it->second]);
    return out;
}

void LabelStore::save(const std::filesystem::path& path) const {
    std::vector<json> rows;
    rows.reserve(records_.size());
    for (const auto& r : records_) rows.push_back(to_json(r));
    write_jsonl(rows, path);
}

}  // namespace scatgate
