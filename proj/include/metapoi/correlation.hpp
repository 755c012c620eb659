#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "metapoi/categories.hpp"
#include "metapoi/data.hpp"

namespace metapoi {

struct CategoryDistribution {
  std::string city_id;
  std::array<double, kNumCategories> probs{};
};

/// Row-major source -> destination, self-transitions included.
struct TransitionDistribution {
  std::string city_id;
  std::array<double, kNumTransitions> probs{};
};

enum class CorrelationMode { kPoiDistribution, kBehavioralTransition };
std::string_view correlation_mode_name(CorrelationMode mode);

struct CorrelationMatrix {
  std::vector<std::string> city_ids;
  std::vector<std::vector<double>> values;
  CorrelationMode mode = CorrelationMode::kBehavioralTransition;

  double at(const std::string& a, const std::string& b) const;
  std::string to_csv() const;
  std::string to_json() const;
};

struct TransitionShare {
  int transition = 0;
  std::string label;
  double proportion = 0.0;
};

CategoryDistribution poi_category_distribution(const CityDataset& city);

/// Counts consecutive category pairs inside each sequence of `sequences`.
TransitionDistribution transition_distribution(std::string city_id,
                                               std::span<const DaySequencePair> sequences);

/// Training split only unless `all_splits` is set.
TransitionDistribution transition_distribution(const CityDataset& city, bool all_splits = false);

/// Sample Pearson correlation. Throws NumericalError on a constant vector and
/// std::invalid_argument on a length mismatch or fewer than 2 entries.
double pearson(std::span<const double> x, std::span<const double> y);

CorrelationMatrix correlation_matrix(std::span<const CityDataset> cities, CorrelationMode mode,
                                     bool all_splits = false);

/// pearson(aux, target) clamped into [floor, 1].
double correlation_weight(const TransitionDistribution& aux, const TransitionDistribution& target,
                          double floor = 0.05);

/// Largest nonzero entries, descending; ties keep row-major index order.
std::vector<TransitionShare> top_transitions(const TransitionDistribution& dist, int k = 10);

std::string category_distribution_csv(std::span<const CategoryDistribution> dists);
std::string top_transitions_csv(std::span<const TransitionShare> shares);

}  // namespace metapoi
