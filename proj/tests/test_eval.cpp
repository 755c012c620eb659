#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "metapoi/eval.hpp"

using namespace metapoi;

namespace {

// Sort-based ranking: order all indices by (prob desc, index asc).
int brute_rank(const std::vector<double>& probs, int truth) {
  std::vector<int> idx(probs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });
  return static_cast<int>(std::find(idx.begin(), idx.end(), truth) - idx.begin()) + 1;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("rank of truth and its tie rule") {
  const std::vector<double> peak{0.1, 0.6, 0.3};
  CHECK(rank_of_truth(peak, 1) == 1);
  const std::vector<double> uniform(5, 0.2);
  CHECK(rank_of_truth(uniform, 2) == 3);
  const std::vector<double> low{0.3, 0.2, 0.25, 0.05, 0.2};
  CHECK(rank_of_truth(low, 3) == 5);
  // permuting equal-probability rivals keeps the rank
  const std::vector<double> a{0.2, 0.1, 0.2, 0.5, 0.2, 0.1}, b{0.1, 0.2, 0.2, 0.1, 0.5, 0.2};
  CHECK(rank_of_truth(a, 2) == rank_of_truth(b, 2));
}

TEST_CASE("HR and NDCG analytic cases") {
  const std::vector<int> r{1, 3, 6, 2};
  CHECK(hit_ratio_at_k(r, 5) == 0.75);
  const std::vector<int> ones(4, 1), far(4, 9);
  CHECK(hit_ratio_at_k(ones, 5) == 1.0);
  CHECK(hit_ratio_at_k(far, 5) == 0.0);
  const std::vector<int> one{1}, three{3}, six{6};
  CHECK(ndcg_at_k(one, 5) == 1.0);
  CHECK(ndcg_at_k(three, 5) == 0.5);
  CHECK(ndcg_at_k(six, 5) == 0.0);
}

TEST_CASE("metrics match a brute-force recomputation on random scores") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> pick(0, 49);
  std::vector<int> ranks, brute;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(50);
    for (auto& v : p) v = std::round(u(rng) * 20) / 20;  // plenty of ties
    const int truth = pick(rng);
    ranks.push_back(rank_of_truth(p, truth));
    brute.push_back(brute_rank(p, truth));
  }
  CHECK(ranks == brute);
  for (int k : {1, 5, 10, 20}) {
    double hr = 0, nd = 0;
    for (int r : brute) {
      if (r <= k) {
        hr += 1;
        nd += 1.0 / std::log2(r + 1.0);
      }
    }
    CHECK(std::abs(hit_ratio_at_k(ranks, k) - hr / 100) < 1e-12);
    CHECK(std::abs(ndcg_at_k(ranks, k) - nd / 100) < 1e-12);
  }
  const auto rep = report_from_ranks(ranks, {1, 5, 10, 20}, "x");
  for (std::size_t i = 0; i < rep.ks.size(); ++i) {
    CHECK(rep.ndcg[i] <= rep.hr[i]);
    CHECK(rep.hr[i] <= 1.0);
    if (i > 0) CHECK(rep.hr[i] >= rep.hr[i - 1]);
  }
  CHECK(rep.count == 100);
  CHECK(rep.hr_at(5) == hit_ratio_at_k(ranks, 5));
}

TEST_CASE("oracle model scores perfectly") {
  const auto seqs = testutil::random_sequences(10, 4, 5, 3);
  ModelState s = init_model({2, 3, 0, 1, 5}, 1);
  for (auto& t : s.values) std::fill(t.begin(), t.end(), 0.0);
  // a decoder bias spike on the true POI of every test sequence
  std::vector<DaySequencePair> same = seqs;
  for (auto& q : same) q.poi_seq.back().poi_id = 4;
  s.tensor("decoder.b")[4] = 10.0;
  const auto rep = evaluate(s, same, {1, 5, 10});
  for (std::size_t i = 0; i < rep.ks.size(); ++i) {
    CHECK(rep.hr[i] == 1.0);
    CHECK(rep.ndcg[i] == 1.0);
  }
  CHECK(evaluate(s, same, {1, 5}).fingerprint == rep.fingerprint);
  CHECK(evaluate(s, seqs).to_json() == evaluate(s, seqs).to_json());
}

TEST_CASE("MostPop ranking") {
  auto seq = [](std::vector<int> pois) {
    DaySequencePair p;
    for (int q : pois) {
      p.category_seq.push_back({0, 0});
      p.poi_seq.push_back({q, 0, 0});
    }
    return p;
  };
  // counts [5, 2, 9]
  const std::vector<DaySequencePair> train{seq({0, 0, 0, 0, 0}), seq({1, 1}), seq({2, 2, 2, 2, 2, 2, 2, 2, 2})};
  CHECK(mostpop_ranking(train, 3) == std::vector<int>{2, 0, 1});
  const std::vector<DaySequencePair> even{seq({0, 1, 2})};
  CHECK(mostpop_ranking(even, 3) == std::vector<int>{0, 1, 2});
  CHECK(mostpop_ranking(train, 5) == std::vector<int>{2, 0, 1, 3, 4});

  const std::vector<DaySequencePair> test{seq({1, 2}), seq({0, 4})};
  const auto rep = evaluate_ranking(mostpop_ranking(train, 5), test, {1, 5});
  CHECK(rep.hr_at(1) == 0.5);
  CHECK(rep.hr_at(5) == 1.0);
  CHECK(rep.ndcg_at(5) == doctest::Approx((1.0 + 1.0 / std::log2(6.0)) / 2));
}

TEST_CASE("report serialisation") {
  const std::vector<int> r{1, 2, 7};
  const auto rep = report_from_ranks(r, {5, 10}, "MERec");
  CHECK(rep.to_csv().rfind("variant,K,metric,value\n", 0) == 0);
  const auto j = nlohmann::json::parse(rep.to_json());
  CHECK(j["variant"] == "MERec");
  CHECK(j["count"] == 3);
}

}  // TEST_SUITE
