#pragma once

#include <cstdint>
#include <map>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string_view>

#include "metapoi/hashing.hpp"
#include "metapoi/model.hpp"

namespace metapoi {

/// Hash of every frozen group, keyed by group name.
std::map<std::string, std::uint64_t> frozen_tensor_hashes(const ModelState& state);

/// Writes manifest.json (shapes, architecture, freeze flags, `extra`) plus one
/// little-endian float64 file per parameter group.
void save_checkpoint(const ModelState& state, const std::filesystem::path& dir,
                     const nlohmann::json& extra = nlohmann::json::object());
ModelState load_checkpoint(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);

nlohmann::json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

}  // namespace metapoi
