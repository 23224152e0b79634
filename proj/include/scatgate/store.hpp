#pragma once
// JSONL persistence for manifests and the append-only label store.

#include "scatgate/frame.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

namespace scatgate {

nlohmann::json to_json(const ManifestEntry& e);
ManifestEntry manifest_entry_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LabelRecord& r);
LabelRecord label_from_json(const nlohmann::json& j);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::vector<nlohmann::json>& rows, const std::filesystem::path& path);

/**
 * Append-only label history.
 *
 * At most one Human verdict per (image, round). The effective verdict of an
 * image is taken from its highest round; at equal round a Human record wins
 * over a Model record. Records are never rewritten.
 */
class LabelStore {
public:
    LabelStore() = default;
    /// Opens (and replays) a JSONL file; subsequent appends are written through.
    explicit LabelStore(std::filesystem::path backing_file);

    void append(const LabelRecord& record);
    void append_all(const std::vector<LabelRecord>& records);

    const std::vector<LabelRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }

    bool has_human(const std::string& image_id, int round) const;
    std::optional<LabelRecord> effective(const std::string& image_id) const;
    /// Latest Human record for the image (highest round, then latest append).
    std::optional<LabelRecord> latest_human(const std::string& image_id) const;
    std::vector<LabelRecord> history(const std::string& image_id) const;

    void save(const std::filesystem::path& path) const;

private:
    std::optional<std::filesystem::path> backing_;
    std::vector<LabelRecord> records_;
    std::multimap<std::string, std::size_t> by_image_;
};

}  // namespace scatgate
