#include "metapoi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "metapoi/hashing.hpp"

namespace metapoi {

int rank_of_truth(std::span<const double> probs, int truth) {
  if (truth < 0 || static_cast<std::size_t>(truth) >= probs.size()) throw std::out_of_range("truth index");
  const double pt = probs[static_cast<std::size_t>(truth)];
  int rank = 1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] > pt || (probs[j] == pt && static_cast<int>(j) < truth)) ++rank;
  }
  return rank;
}

double hit_ratio_at_k(std::span<const int> ranks, int k) {
  if (ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (int r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double ndcg_at_k(std::span<const int> ranks, int k) {
  if (ranks.empty()) return 0.0;
  double sum = 0.0;
  for (int r : ranks) {
    if (r <= k) sum += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  return sum / static_cast<double>(ranks.size());
}

double EvalReport::hr_at(int k) const {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw std::out_of_range("K not in report");
  return hr[static_cast<std::size_t>(it - ks.begin())];
}

double EvalReport::ndcg_at(int k) const {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw std::out_of_range("K not in report");
  return ndcg[static_cast<std::size_t>(it - ks.begin())];
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["variant"] = variant;
  j["count"] = count;
  j["fingerprint"] = fingerprint;
  j["metrics"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    j["metrics"].push_back({{"K", ks[i]}, {"HR", hr[i]}, {"NDCG", ndcg[i]}});
  }
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "variant,K,metric,value\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    out << variant << ',' << ks[i] << ",HR," << hr[i] << '\n';
    out << variant << ',' << ks[i] << ",NDCG," << ndcg[i] << '\n';
  }
  return out.str();
}

EvalReport report_from_ranks(std::span<const int> ranks, const std::vector<int>& ks, std::string variant) {
  EvalReport r;
  r.variant = std::move(variant);
  r.ks = ks;
  r.count = ranks.size();
  for (int k : ks) {
    r.hr.push_back(hit_ratio_at_k(ranks, k));
    r.ndcg.push_back(ndcg_at_k(ranks, k));
  }
  return r;
}

std::vector<int> model_ranks(const ModelState& model, std::span<const DaySequencePair> sequences) {
  std::vector<int> ranks;
  ranks.reserve(sequences.size());
  for (const auto& s : sequences) {
    const auto probs = predict_next_poi(model, s);
    ranks.push_back(rank_of_truth(probs, s.poi_seq.back().poi_id));
  }
  return ranks;
}

EvalReport evaluate(const ModelState& model, std::span<const DaySequencePair> test, const std::vector<int>& ks,
                    std::string variant) {
  const auto ranks = model_ranks(model, test);
  EvalReport r = report_from_ranks(ranks, ks, std::move(variant));
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : model.values) h ^= tensor_hash(t) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  r.fingerprint = hex64(h);
  return r;
}

std::vector<int> mostpop_ranking(std::span<const DaySequencePair> train, int num_pois) {
  std::vector<long> counts(static_cast<std::size_t>(num_pois), 0);
  for (const auto& s : train) {
    for (const auto& step : s.poi_seq) ++counts[static_cast<std::size_t>(step.poi_id)];
  }
  std::vector<int> order(static_cast<std::size_t>(num_pois));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });
  return order;
}

EvalReport evaluate_ranking(const std::vector<int>& ranking, std::span<const DaySequencePair> test,
                            const std::vector<int>& ks, std::string variant) {
  std::vector<int> position(ranking.size());
  for (std::size_t i = 0; i < ranking.size(); ++i) position[static_cast<std::size_t>(ranking[i])] = static_cast<int>(i);
  std::vector<int> ranks;
  for (const auto& s : test) ranks.push_back(position[static_cast<std::size_t>(s.poi_seq.back().poi_id)] + 1);
  EvalReport r = report_from_ranks(ranks, ks, std::move(variant));
  r.fingerprint = "mostpop";
  return r;
}

}  // namespace metapoi
