#pragma once

#include <span>
#include <string>
#include <vector>

#include "metapoi/data.hpp"
#include "metapoi/model.hpp"

namespace metapoi {

/// 1 + #rivals with higher probability + #lower-indexed rivals with equal
/// probability.
int rank_of_truth(std::span<const double> probs, int truth);

double hit_ratio_at_k(std::span<const int> ranks, int k);
double ndcg_at_k(std::span<const int> ranks, int k);

struct EvalReport {
  std::string variant;
  std::vector<int> ks;
  std::vector<double> hr;
  std::vector<double> ndcg;
  std::size_t count = 0;
  std::string fingerprint;

  double hr_at(int k) const;
  double ndcg_at(int k) const;
  std::string to_json() const;
  std::string to_csv() const;
};

EvalReport report_from_ranks(std::span<const int> ranks, const std::vector<int>& ks, std::string variant = "");

/// Rank of the final POI of every sequence, predicted from its other steps.
std::vector<int> model_ranks(const ModelState& model, std::span<const DaySequencePair> sequences);

EvalReport evaluate(const ModelState& model, std::span<const DaySequencePair> test,
                    const std::vector<int>& ks = {5, 10}, std::string variant = "");

/// POIs by training check-in count, descending; ties and unseen POIs by index.
std::vector<int> mostpop_ranking(std::span<const DaySequencePair> train, int num_pois);

EvalReport evaluate_ranking(const std::vector<int>& ranking, std::span<const DaySequencePair> test,
                            const std::vector<int>& ks = {5, 10}, std::string variant = "MostPop");

}  // namespace metapoi
