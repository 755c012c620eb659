#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "metapoi/data.hpp"
#include "metapoi/model.hpp"
#include "metapoi/synth.hpp"

namespace testutil {

using namespace metapoi;

inline CheckinRecord rec(std::string user, std::string poi, int cat, std::int64_t ts, double lat = 40.0,
                         double lon = -74.0) {
  CheckinRecord r;
  r.user_id = std::move(user);
  r.poi_id = std::move(poi);
  r.category_id = cat;
  r.coordinate = {lat, lon};
  r.timestamp = ts;
  return r;
}

// Small hand-made sequences for model tests: num_pois POIs, categories and
// slots drawn from a seeded generator.
inline std::vector<DaySequencePair> random_sequences(int count, int max_len, int num_pois, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cat(0, 9), slot(0, 47), poi(0, num_pois - 1), dist(1, 7),
      len(2, max_len);
  std::vector<DaySequencePair> out;
  for (int s = 0; s < count; ++s) {
    DaySequencePair p;
    p.user_id = "u" + std::to_string(s);
    p.date = s;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) {
      const int t = slot(rng);
      p.category_seq.push_back({cat(rng), t});
      p.poi_seq.push_back({poi(rng), k == 0 ? 0 : dist(rng), t});
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline SyntheticCity small_city(std::string id, int users, const TransitionMatrix& m) {
  SyntheticCity c;
  c.city_id = std::move(id);
  c.users = users;
  c.pois_per_category = 3;
  c.transition = m;
  c.days_per_user = 6;
  c.min_length = 2;
  c.max_length = 5;
  return c;
}

inline CityDataset synthetic_dataset(const SyntheticCity& c, std::uint64_t seed) {
  return build_city_dataset(c.city_id, generate_city(c, seed), 5, 3);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("metapoi_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace testutil
