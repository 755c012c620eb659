#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "metapoi/categories.hpp"
#include "metapoi/correlation.hpp"
#include "metapoi/errors.hpp"

using namespace metapoi;

namespace {

// Textbook single-pass formula, independent of the library's two-pass code.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

DaySequencePair cat_seq(std::initializer_list<int> cats) {
  DaySequencePair p;
  for (int c : cats) {
    p.category_seq.push_back({c, 0});
    p.poi_seq.push_back({0, 0, 0});
  }
  return p;
}

// 100-dim probability vector with centered part a*u + b*v, where u and v
// are orthonormal and centered.
TransitionDistribution mixed(double a, double b) {
  TransitionDistribution d;
  const double s = 0.001 / std::sqrt(2.0);
  d.probs.fill(0.01);
  d.probs[0] += a * s;
  d.probs[1] -= a * s;
  d.probs[2] += b * s;
  d.probs[3] -= b * s;
  return d;
}

}  // namespace

TEST_SUITE("correlation") {

TEST_CASE("pearson hand cases") {
  const std::vector<double> x{1, 2, 3}, y{1, 2, 4};
  CHECK(std::abs(pearson(x, y) - 0.9820) < 5e-4);
  CHECK(pearson(x, y) == doctest::Approx(pearson_oracle(x, y)).epsilon(1e-14));
  CHECK(pearson(x, x) == doctest::Approx(1.0));
  const std::vector<double> neg{-1, -2, -3};
  CHECK(pearson(x, neg) == doctest::Approx(-1.0));
  const std::vector<double> flat{2, 2, 2};
  CHECK_THROWS_AS(pearson(x, flat), NumericalError);
  const std::vector<double> short_vec{1, 2};
  CHECK_THROWS_AS(pearson(x, short_vec), std::invalid_argument);
}

TEST_CASE("pearson matches the oracle and is symmetric and affine invariant") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (int t = 0; t < 10; ++t) {
    std::vector<double> x(100), y(100);
    for (auto& v : x) v = g(rng);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.4 * x[i] + g(rng);
    const double r = pearson(x, y);
    CHECK(std::abs(r - pearson_oracle(x, y)) < 1e-10);
    CHECK(pearson(y, x) == r);
    std::vector<double> ax(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) ax[i] = 2.0 * x[i] + 3.0;
    CHECK(std::abs(pearson(ax, y) - r) < 1e-9);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
  }
}

TEST_CASE("category distribution from POI majority categories") {
  CityDataset c;
  c.city_id = "c";
  c.poi_category = {3, 3, 3, 8};
  const auto d = poi_category_distribution(c);
  CHECK(d.probs[3] == doctest::Approx(0.75));
  CHECK(d.probs[8] == doctest::Approx(0.25));
  CHECK(std::accumulate(d.probs.begin(), d.probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  c.poi_category = {3, 3};
  CHECK(poi_category_distribution(c).probs[3] == 1.0);
  c.poi_category.clear();
  CHECK_THROWS_AS(poi_category_distribution(c), DataError);
}

TEST_CASE("transition counting stays inside sequences") {
  const std::vector<DaySequencePair> one{cat_seq({3, 8, 3})};
  const auto d = transition_distribution("c", one);
  CHECK(d.probs[3 * 10 + 8] == doctest::Approx(0.5));
  CHECK(d.probs[8 * 10 + 3] == doctest::Approx(0.5));

  const std::vector<DaySequencePair> self{cat_seq({3, 3}), cat_seq({3, 3})};
  CHECK(transition_distribution("c", self).probs[33] == 1.0);

  // FO->SS in one day and SS->... in the next day: no cross-day SS->SS
  const std::vector<DaySequencePair> two{cat_seq({3, 8}), cat_seq({8, 0})};
  const auto t = transition_distribution("c", two);
  CHECK(t.probs[88] == 0.0);
  CHECK(t.probs[38] == doctest::Approx(0.5));
  CHECK(t.probs[80] == doctest::Approx(0.5));

  const std::vector<DaySequencePair> none;
  CHECK_THROWS_AS(transition_distribution("c", none), DataError);
}

TEST_CASE("correlation weight clamps into [floor, 1]") {
  const auto target = mixed(1.0, 0.0);
  CHECK(correlation_weight(target, target) == 1.0);
  CHECK(correlation_weight(mixed(0.6, 0.8), target) == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(correlation_weight(mixed(-0.2, std::sqrt(0.96)), target) == 0.05);
  CHECK(correlation_weight(mixed(-0.2, std::sqrt(0.96)), target, 0.1) == 0.1);
  // monotone in the underlying coefficient
  double last = 0.0;
  for (double a = -1.0; a <= 1.0; a += 0.1) {
    const double w = correlation_weight(mixed(a, std::sqrt(std::max(0.0, 1 - a * a))), target);
    CHECK(w >= last);
    CHECK(w >= 0.05);
    CHECK(w <= 1.0);
    last = w;
  }
}

TEST_CASE("top transitions: descending, ties by index") {
  const std::vector<DaySequencePair> one{cat_seq({3, 8, 3})};
  const auto top = top_transitions(transition_distribution("c", one), 10);
  REQUIRE(top.size() == 2);
  CHECK(top[0].label == "FO2SS");
  CHECK(top[1].label == "SS2FO");

  const std::vector<DaySequencePair> uneven{cat_seq({3, 8}), cat_seq({3, 8}), cat_seq({3, 8}), cat_seq({0, 1})};
  const auto dist = transition_distribution("c", uneven);
  const auto k1 = top_transitions(dist, 1);
  REQUIRE(k1.size() == 1);
  CHECK(k1[0].proportion == doctest::Approx(0.75));
  CHECK(top_transitions(transition_distribution("c", std::vector<DaySequencePair>{cat_seq({3, 3})}), 10).size() == 1);
  const std::vector<TransitionShare> shares = top_transitions(dist, 10);
  CHECK(top_transitions_csv(shares).rfind("transition_label,proportion\n", 0) == 0);
}

TEST_CASE("correlation matrix on synthetic cities") {
  const auto shared = random_transition_matrix(21);
  const auto other = random_transition_matrix(99);
  std::vector<CityDataset> cities;
  cities.push_back(testutil::synthetic_dataset(testutil::small_city("A", 120, shared), 1));
  cities.push_back(testutil::synthetic_dataset(testutil::small_city("B", 120, shared), 2));
  cities.push_back(testutil::synthetic_dataset(testutil::small_city("C", 120, other), 3));
  {
    const auto m = correlation_matrix(cities, CorrelationMode::kBehavioralTransition);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(m.values[i][i] == 1.0);
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(m.values[i][j] == m.values[j][i]);
        CHECK(std::abs(m.values[i][j]) <= 1.0);
      }
    }
    CHECK(m.at("A", "B") > m.at("A", "C"));
    // matches the oracle on the raw vectors
    const auto da = transition_distribution(cities[0]), dc = transition_distribution(cities[2]);
    CHECK(std::abs(m.at("A", "C") - pearson_oracle({da.probs.begin(), da.probs.end()},
                                                   {dc.probs.begin(), dc.probs.end()})) < 1e-10);
  }
  // identical distributions give exactly 1 off the diagonal
  std::vector<CityDataset> twins{cities[0], cities[0]};
  twins[1].city_id = "A2";
  CHECK(correlation_matrix(twins, CorrelationMode::kBehavioralTransition).at("A", "A2") == doctest::Approx(1.0));

  const auto m = correlation_matrix(cities, CorrelationMode::kBehavioralTransition);
  CHECK(m.to_csv().rfind("city,A,B,C\n", 0) == 0);
  CHECK(m.to_json().find("\"A\"") != std::string::npos);
}

TEST_CASE("POI-distribution correlation reports the offending pair") {
  std::vector<CityDataset> cities(2);
  cities[0].city_id = "flat";
  cities[0].poi_category = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  cities[1].city_id = "peaked";
  cities[1].poi_category = {3, 3, 3, 8};
  try {
    correlation_matrix(cities, CorrelationMode::kPoiDistribution);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("flat") != std::string::npos);
  }
  cities[0].poi_category = {3, 3, 8, 1};
  const auto m = correlation_matrix(cities, CorrelationMode::kPoiDistribution);
  CHECK(m.at("flat", "peaked") > 0.5);
}

}  // TEST_SUITE
