#include "metapoi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "metapoi/errors.hpp"
#include "metapoi/hashing.hpp"

namespace metapoi {

namespace {

constexpr std::int64_t kBaseDay = 15433;  // 2012-04-03
constexpr double kKmPerDegree = 111.32;

void check_rows(const TransitionMatrix& m, const std::string& city) {
  for (const auto& row : m) {
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw ConfigError("negative transition probability in city '" + city + "'");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("transition row does not sum to 1 in city '" + city + "'");
  }
}

template <class Rng>
int draw(const std::array<double, kNumCategories>& probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng), acc = 0.0;
  for (int c = 0; c < kNumCategories; ++c) {
    acc += probs[static_cast<std::size_t>(c)];
    if (x < acc) return c;
  }
  return kNumCategories - 1;
}

}  // namespace

TransitionMatrix random_transition_matrix(std::uint64_t seed, double concentration) {
  if (!(concentration > 0.0)) throw ConfigError("Dirichlet concentration must be positive");
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(concentration, 1.0);
  TransitionMatrix m{};
  for (auto& row : m) {
    double sum = 0.0;
    for (double& p : row) {
      p = gamma(rng) + 1e-12;
      sum += p;
    }
    for (double& p : row) p /= sum;
  }
  return m;
}

std::vector<CheckinRecord> generate_city(const SyntheticCity& city, std::uint64_t seed) {
  check_rows(city.transition, city.city_id);
  if (city.users < 1 || city.pois_per_category < 1 || city.days_per_user < 1 || city.min_length < 1 ||
      city.max_length < city.min_length) {
    throw ConfigError("invalid synthetic city '" + city.city_id + "'");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double lat_scale = 1.0 / kKmPerDegree;
  const double lon_scale =
      1.0 / (kKmPerDegree * std::max(0.1, std::cos(city.center.latitude * std::numbers::pi / 180.0)));

  // One cluster centre per category, POIs scattered around it.
  std::vector<Coordinate> poi_coord;
  for (int c = 0; c < kNumCategories; ++c) {
    const Coordinate centre{city.center.latitude + normal(rng) * city.spread_km * lat_scale,
                            city.center.longitude + normal(rng) * city.spread_km * lon_scale};
    for (int k = 0; k < city.pois_per_category; ++k) {
      poi_coord.push_back({std::clamp(centre.latitude + normal(rng) * 0.3 * city.spread_km * lat_scale, -90.0, 90.0),
                           std::clamp(centre.longitude + normal(rng) * 0.3 * city.spread_km * lon_scale, -180.0,
                                      180.0)});
    }
  }

  std::uniform_int_distribution<int> start_cat(0, kNumCategories - 1);
  std::uniform_int_distribution<int> pick_poi(0, city.pois_per_category - 1);
  std::uniform_int_distribution<int> length(city.min_length, city.max_length);
  std::uniform_int_distribution<int> day_offset(0, 6);
  std::uniform_int_distribution<std::int64_t> second(0, 86399);

  std::vector<CheckinRecord> out;
  for (int u = 0; u < city.users; ++u) {
    const std::string user = city.city_id + "_u" + std::to_string(u);
    std::int64_t day = kBaseDay + day_offset(rng);
    for (int d = 0; d < city.days_per_user; ++d) {
      day += 1 + day_offset(rng) / 3;
      const int n = length(rng);
      std::vector<std::int64_t> secs(static_cast<std::size_t>(n));
      for (auto& s : secs) s = second(rng);
      std::sort(secs.begin(), secs.end());
      int cat = start_cat(rng);
      for (int k = 0; k < n; ++k) {
        if (k > 0) cat = draw(city.transition[static_cast<std::size_t>(cat)], rng);
        const int p = cat * city.pois_per_category + pick_poi(rng);
        CheckinRecord r;
        r.user_id = user;
        r.poi_id = city.city_id + "_p" + std::to_string(p);
        r.category_id = cat;
        r.coordinate = poi_coord[static_cast<std::size_t>(p)];
        r.tz_offset_minutes = city.tz_offset_minutes;
        r.timestamp = day * 86400 + secs[static_cast<std::size_t>(k)] - std::int64_t{city.tz_offset_minutes} * 60;
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

void write_checkins_csv(std::span<const CheckinRecord> records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(10);
  out << "user_id,poi_id,category,latitude,longitude,timestamp,tz_offset_minutes\n";
  for (const auto& r : records) {
    out << r.user_id << ',' << r.poi_id << ',' << category_code(r.category_id) << ',' << r.coordinate.latitude
        << ',' << r.coordinate.longitude << ',' << r.timestamp << ',' << r.tz_offset_minutes << '\n';
  }
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec spec;
  spec.seed = j.value("seed", std::uint64_t{1});
  if (!j.contains("cities") || !j["cities"].is_array() || j["cities"].empty()) {
    throw ConfigError("synthetic spec needs a non-empty 'cities' array");
  }
  for (const auto& jc : j["cities"]) {
    SyntheticCity c;
    c.city_id = jc.at("id").get<std::string>();
    c.users = jc.value("users", c.users);
    c.pois_per_category = jc.value("pois_per_category", c.pois_per_category);
    c.days_per_user = jc.value("days_per_user", c.days_per_user);
    c.min_length = jc.value("min_length", c.min_length);
    c.max_length = jc.value("max_length", c.max_length);
    c.spread_km = jc.value("spread_km", c.spread_km);
    c.tz_offset_minutes = jc.value("tz_offset_minutes", 0);
    if (jc.contains("center")) c.center = {jc["center"].at(0).get<double>(), jc["center"].at(1).get<double>()};
    const auto& t = jc.at("transition");
    if (t.is_array()) {
      if (t.size() != kNumCategories) throw ConfigError("transition matrix must be 10x10");
      for (std::size_t r = 0; r < kNumCategories; ++r) {
        if (t[r].size() != kNumCategories) throw ConfigError("transition matrix must be 10x10");
        for (std::size_t k = 0; k < kNumCategories; ++k) c.transition[r][k] = t[r][k].get<double>();
      }
    } else if (t.contains("same_as")) {
      const auto other = t["same_as"].get<std::string>();
      auto it = std::find_if(spec.cities.begin(), spec.cities.end(),
                             [&](const SyntheticCity& s) { return s.city_id == other; });
      if (it == spec.cities.end()) throw ConfigError("'same_as' refers to unknown or later city '" + other + "'");
      c.transition = it->transition;
    } else if (t.contains("random")) {
      c.transition = random_transition_matrix(t["random"].get<std::uint64_t>(), t.value("concentration", 0.3));
    } else {
      throw ConfigError("unrecognised transition spec for city '" + c.city_id + "'");
    }
    check_rows(c.transition, c.city_id);
    spec.cities.push_back(std::move(c));
  }
  return spec;
}

}  // namespace metapoi
