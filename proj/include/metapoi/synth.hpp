#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "metapoi/categories.hpp"
#include "metapoi/data.hpp"

namespace metapoi {

using TransitionMatrix = std::array<std::array<double, kNumCategories>, kNumCategories>;

struct SyntheticCity {
  std::string city_id;
  int users = 100;
  int pois_per_category = 5;
  TransitionMatrix transition{};
  int days_per_user = 10;
  int min_length = 2;
  int max_length = 6;
  Coordinate center{40.0, -74.0};
  double spread_km = 5.0;
  int tz_offset_minutes = 0;
};

struct SyntheticSpec {
  std::vector<SyntheticCity> cities;
  std::uint64_t seed = 1;
};

/// Dirichlet(concentration) rows; small concentration gives peaked rows.
TransitionMatrix random_transition_matrix(std::uint64_t seed, double concentration = 0.3);

/// Day sequences follow the city's category Markov chain; POIs are uniform
/// within the drawn category; timestamps uniform within the local day.
std::vector<CheckinRecord> generate_city(const SyntheticCity& city, std::uint64_t seed);

void write_checkins_csv(std::span<const CheckinRecord> records, const std::filesystem::path& path);

/// {"seed": 7, "cities": [{"id": "T", "users": 50, "transition": {"random": 11,
/// "concentration": 0.3}}, {"id": "A", "transition": {"same_as": "T"}}, ...]}
/// "transition" may also be an explicit 10x10 array.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

}  // namespace metapoi
