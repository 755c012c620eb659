#include "metapoi/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "metapoi/errors.hpp"

namespace metapoi {

namespace {

template <std::size_t N>
void normalize(std::array<double, N>& counts, const std::string& what) {
  double total = 0.0;
  for (double c : counts) total += c;
  if (total <= 0.0) throw DataError(what);
  for (double& c : counts) c /= total;
}

}  // namespace

std::string_view correlation_mode_name(CorrelationMode mode) {
  return mode == CorrelationMode::kPoiDistribution ? "poi-distribution" : "behavioral-transition";
}

double CorrelationMatrix::at(const std::string& a, const std::string& b) const {
  const auto ia = std::find(city_ids.begin(), city_ids.end(), a) - city_ids.begin();
  const auto ib = std::find(city_ids.begin(), city_ids.end(), b) - city_ids.begin();
  if (ia == static_cast<long>(city_ids.size()) || ib == static_cast<long>(city_ids.size())) {
    throw std::out_of_range("city not in correlation matrix");
  }
  return values[static_cast<std::size_t>(ia)][static_cast<std::size_t>(ib)];
}

std::string CorrelationMatrix::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "city";
  for (const auto& id : city_ids) out << ',' << id;
  out << '\n';
  for (std::size_t i = 0; i < city_ids.size(); ++i) {
    out << city_ids[i];
    for (double v : values[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::string CorrelationMatrix::to_json() const {
  nlohmann::json j;
  j["mode"] = correlation_mode_name(mode);
  j["city_ids"] = city_ids;
  j["values"] = values;
  return j.dump(2);
}

CategoryDistribution poi_category_distribution(const CityDataset& city) {
  if (city.poi_category.empty()) throw DataError("city '" + city.city_id + "' has no POIs");
  CategoryDistribution d;
  d.city_id = city.city_id;
  for (int c : city.poi_category) d.probs[static_cast<std::size_t>(c)] += 1.0;
  normalize(d.probs, "city '" + city.city_id + "' has no POIs");
  return d;
}

TransitionDistribution transition_distribution(std::string city_id,
                                               std::span<const DaySequencePair> sequences) {
  TransitionDistribution d;
  d.city_id = std::move(city_id);
  for (const auto& s : sequences) {
    for (std::size_t k = 0; k + 1 < s.category_seq.size(); ++k) {
      const int from = s.category_seq[k].category_id;
      const int to = s.category_seq[k + 1].category_id;
      d.probs[static_cast<std::size_t>(from * kNumCategories + to)] += 1.0;
    }
  }
  normalize(d.probs, "city '" + d.city_id + "' has no category transitions");
  return d;
}

TransitionDistribution transition_distribution(const CityDataset& city, bool all_splits) {
  return transition_distribution(city.city_id,
                                 all_splits ? std::span<const DaySequencePair>(city.sequences) : city.train());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("pearson: need at least 2 entries");
  auto constant = [](std::span<const double> v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
  };
  if (constant(x) || constant(y)) throw NumericalError("pearson: constant vector (zero variance)");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericalError("pearson: constant vector (zero variance)");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationMatrix correlation_matrix(std::span<const CityDataset> cities, CorrelationMode mode,
                                     bool all_splits) {
  if (cities.size() < 2) throw std::invalid_argument("correlation matrix needs at least 2 cities");
  std::vector<std::vector<double>> vectors;
  CorrelationMatrix m;
  m.mode = mode;
  for (const auto& city : cities) {
    m.city_ids.push_back(city.city_id);
    if (mode == CorrelationMode::kPoiDistribution) {
      const auto d = poi_category_distribution(city);
      vectors.emplace_back(d.probs.begin(), d.probs.end());
    } else {
      const auto d = transition_distribution(city, all_splits);
      vectors.emplace_back(d.probs.begin(), d.probs.end());
    }
  }
  const std::size_t n = cities.size();
  m.values.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    m.values[i][i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double r = 0.0;
      try {
        r = pearson(vectors[i], vectors[j]);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " for cities " + m.city_ids[i] + ", " + m.city_ids[j]);
      }
      m.values[i][j] = r;
      m.values[j][i] = r;
    }
  }
  return m;
}

double correlation_weight(const TransitionDistribution& aux, const TransitionDistribution& target,
                          double floor) {
  if (!(floor >= 0.0 && floor <= 1.0)) throw ConfigError("gamma floor must lie in [0, 1]");
  if (aux.probs == target.probs) return 1.0;
  return std::clamp(pearson(aux.probs, target.probs), floor, 1.0);
}

std::vector<TransitionShare> top_transitions(const TransitionDistribution& dist, int k) {
  std::vector<int> order;
  for (int i = 0; i < kNumTransitions; ++i) {
    if (dist.probs[static_cast<std::size_t>(i)] > 0.0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dist.probs[static_cast<std::size_t>(a)] > dist.probs[static_cast<std::size_t>(b)];
  });
  if (k >= 0 && order.size() > static_cast<std::size_t>(k)) order.resize(static_cast<std::size_t>(k));
  std::vector<TransitionShare> out;
  for (int i : order) out.push_back({i, transition_label(i), dist.probs[static_cast<std::size_t>(i)]});
  return out;
}

std::string category_distribution_csv(std::span<const CategoryDistribution> dists) {
  std::ostringstream out;
  out.precision(17);
  out << "city,category,proportion\n";
  for (const auto& d : dists) {
    for (int c = 0; c < kNumCategories; ++c) {
      out << d.city_id << ',' << category_code(c) << ',' << d.probs[static_cast<std::size_t>(c)] << '\n';
    }
  }
  return out.str();
}

std::string top_transitions_csv(std::span<const TransitionShare> shares) {
  std::ostringstream out;
  out.precision(17);
  out << "transition_label,proportion\n";
  for (const auto& s : shares) out << s.label << ',' << s.proportion << '\n';
  return out.str();
}

}  // namespace metapoi
