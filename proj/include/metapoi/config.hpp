#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "metapoi/data.hpp"
#include "metapoi/meta.hpp"
#include "metapoi/model.hpp"

namespace metapoi {

struct CityInput {
  std::string id;
  std::filesystem::path raw;      // delimited check-in log (may be empty when `dataset` is set)
  std::filesystem::path dataset;  // serialized CityDataset directory
};

struct RunConfig {
  std::vector<CityInput> cities;
  std::string target;
  CsvSchema schema;
  int min_user = 5;
  int min_poi = 3;
  Architecture arch{16, 16, 3, 0, 0};
  MetaConfig meta;
  FreezeConfig freeze;
  TrainConfig train;
  std::vector<int> ks{5, 10};
  std::filesystem::path out = "run";
  std::uint64_t seed = 1;
  std::optional<nlohmann::json> synth;

  nlohmann::json to_json() const;
  /// Hash of the canonical JSON form, excluding the output directory.
  std::string fingerprint() const;
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

std::string_view order_name(MetaOrder order);
MetaOrder parse_order(std::string_view name);

}  // namespace metapoi
