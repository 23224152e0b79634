#pragma once
// Minimal TOML reader for configuration files.
//
// Supports: comments, [table] and [dotted.table] headers, bare or quoted
// keys, basic strings, integers, floats, booleans and single-line arrays of
// those. Produces a JSON object tree so callers share one access idiom.

#include "json.hpp"

#include <filesystem>
#include <string>

namespace scatgate::config {

nlohmann::json parse_toml(const std::string& text);
nlohmann::json load_toml(const std::filesystem::path& path);

}  // namespace scatgate::config
