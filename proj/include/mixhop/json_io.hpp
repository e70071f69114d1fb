#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "mixhop/model.hpp"

namespace mixhop {

nlohmann::json spec_to_json(const ModelSpec& spec);
/// Throws ConfigError on a malformed document.
ModelSpec spec_from_json(const nlohmann::json& doc);

/// Writes `doc.dump(2)` plus a trailing newline. Output is byte-stable for
/// equal documents.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace mixhop
