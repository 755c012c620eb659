#include "metapoi/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "metapoi/correlation.hpp"
#include "metapoi/eval.hpp"
#include "metapoi/hashing.hpp"
#include "metapoi/optim.hpp"

namespace metapoi {

namespace {

constexpr TaskSpec kCategoryTask{Task::kCategory, false};

const CityDataset& find_city(std::span<const CityDataset> cities, const std::string& id) {
  for (const auto& c : cities) {
    if (c.city_id == id) return c;
  }
  throw ConfigError("unknown city '" + id + "'");
}

void add_into(std::vector<std::vector<double>>& acc, const std::vector<std::vector<double>>& g) {
  for (std::size_t k = 0; k < acc.size(); ++k) {
    for (std::size_t i = 0; i < acc[k].size(); ++i) acc[k][i] += g[k][i];
  }
}

std::vector<std::vector<double>> zeros_like(const ModelState& s) {
  std::vector<std::vector<double>> z;
  for (const auto& t : s.values) z.emplace_back(t.size(), 0.0);
  return z;
}

bool all_finite(const ModelState& s) {
  for (const auto& t : s.values) {
    for (double v : t) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// Mini-batches over a shuffled copy of `data`.
std::vector<SequenceBatch> shuffled_batches(std::span<const DaySequencePair> data, int batch_size,
                                            std::mt19937_64& rng) {
  SequenceBatch all = as_batch(data);
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<SequenceBatch> out;
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t i = 0; i < all.size(); i += bs) {
    out.emplace_back(all.begin() + static_cast<long>(i),
                     all.begin() + static_cast<long>(std::min(all.size(), i + bs)));
  }
  return out;
}

class CategoryTaskLoss : public TaskLoss {
 public:
  double value(const ModelState& theta, const SequenceBatch& batch) const override {
    return compute_loss(theta, batch, kCategoryTask);
  }
  GradientBundle gradient(const ModelState& theta, const SequenceBatch& batch) const override {
    return compute_gradients(theta, batch, kCategoryTask);
  }
  std::vector<std::vector<double>> hessian_vector(const ModelState& theta, const SequenceBatch& batch,
                                                  const std::vector<std::vector<double>>& v) const override {
    return hessian_vector_product(theta, batch, kCategoryTask, v);
  }
};

}  // namespace

const TaskLoss& category_task_loss() {
  static const CategoryTaskLoss loss;
  return loss;
}

GammaTable correlation_gammas(std::span<const CityDataset> cities, const std::string& target_id, double floor,
                              bool use_correlation) {
  const CityDataset& target = find_city(cities, target_id);
  GammaTable gammas;
  const auto target_dist = use_correlation ? transition_distribution(target) : TransitionDistribution{};
  for (const auto& c : cities) {
    if (!use_correlation || c.city_id == target_id) {
      gammas[c.city_id] = 1.0;
    } else {
      gammas[c.city_id] = correlation_weight(transition_distribution(c), target_dist, floor);
    }
  }
  return gammas;
}

std::vector<TaskEpisode> sample_task_batch(std::span<const CityDataset> cities, const GammaTable& gammas,
                                           int support_size, int city_batch, std::mt19937_64& rng) {
  if (support_size < 1) throw ConfigError("N must be >= 1");
  std::vector<std::size_t> chosen(cities.size());
  std::iota(chosen.begin(), chosen.end(), 0);
  if (city_batch > 0 && static_cast<std::size_t>(city_batch) < cities.size()) {
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(static_cast<std::size_t>(city_batch));
    std::sort(chosen.begin(), chosen.end());  // reduction stays in city-list order
  }

  const auto N = static_cast<std::size_t>(support_size);
  std::vector<TaskEpisode> episodes;
  for (std::size_t ci : chosen) {
    const CityDataset& city = cities[ci];
    const auto train = city.train();
    if (train.empty()) throw DataError("city '" + city.city_id + "' has an empty training split");
    TaskEpisode ep;
    ep.city_id = city.city_id;
    const auto g = gammas.find(city.city_id);
    if (g == gammas.end()) throw ConfigError("no correlation weight for city '" + city.city_id + "'");
    ep.gamma_cor = g->second;

    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    if (train.size() >= 2 * N) {
      for (std::size_t i = 0; i < N; ++i) ep.support.push_back(&train[idx[i]]);
      for (std::size_t i = N; i < 2 * N; ++i) ep.query.push_back(&train[idx[i]]);
    } else {
      if (train.size() < 2) {
        throw DataError("city '" + city.city_id + "' needs at least 2 training sequences for an episode");
      }
      // Too small: draw with replacement from two disjoint halves.
      ep.with_replacement = true;
      const std::size_t half = train.size() / 2;
      std::uniform_int_distribution<std::size_t> pick_s(0, half - 1), pick_q(half, train.size() - 1);
      for (std::size_t i = 0; i < N; ++i) ep.support.push_back(&train[idx[pick_s(rng)]]);
      for (std::size_t i = 0; i < N; ++i) ep.query.push_back(&train[idx[pick_q(rng)]]);
    }
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

ModelState local_update(const ModelState& theta, const TaskEpisode& episode, double alpha, int steps,
                        std::vector<ModelState>* trajectory, const TaskLoss& loss) {
  if (steps < 1) throw ConfigError("local_steps must be >= 1");
  // Scaling the support loss by gamma scales its gradient; folding gamma into
  // the step size makes (gamma, alpha) and (1, gamma * alpha) identical.
  const double lr = alpha * episode.gamma_cor;
  ModelState current = theta;
  for (int s = 0; s < steps; ++s) {
    if (trajectory) trajectory->push_back(current);
    const GradientBundle g = loss.gradient(current, episode.support);
    current = apply_update(current, g, lr);
  }
  return current;
}

GradientBundle meta_gradient(const ModelState& theta, const std::vector<TaskEpisode>& episodes, double alpha,
                             int steps, MetaOrder order, std::vector<double>* per_episode_loss,
                             const TaskLoss& loss) {
  if (episodes.empty()) throw std::invalid_argument("global update needs at least one episode");
  GradientBundle total;
  total.grads = zeros_like(theta);
  for (const auto& ep : episodes) {
    std::vector<ModelState> trajectory;
    const ModelState adapted =
        local_update(theta, ep, alpha, steps, order == MetaOrder::kSecond ? &trajectory : nullptr, loss);
    GradientBundle q = loss.gradient(adapted, ep.query);
    if (order == MetaOrder::kSecond) {
      // v <- (I - lr * H_support(theta_k)) v, from the last inner step back.
      const double lr = alpha * ep.gamma_cor;
      for (std::size_t k = trajectory.size(); k-- > 0;) {
        const auto hv = loss.hessian_vector(trajectory[k], ep.support, q.grads);
        for (std::size_t g = 0; g < hv.size(); ++g) {
          for (std::size_t i = 0; i < hv[g].size(); ++i) q.grads[g][i] -= lr * hv[g][i];
        }
      }
    }
    add_into(total.grads, q.grads);
    total.loss += q.loss;
    if (per_episode_loss) per_episode_loss->push_back(q.loss);
  }
  return total;
}

double meta_objective(const ModelState& theta, const std::vector<TaskEpisode>& episodes, double alpha, int steps,
                      const TaskLoss& loss) {
  double sum = 0.0;
  for (const auto& ep : episodes) sum += loss.value(local_update(theta, ep, alpha, steps, nullptr, loss), ep.query);
  return sum;
}

GlobalStep global_update(const ModelState& theta, const std::vector<TaskEpisode>& episodes, double alpha,
                         double beta, int steps, MetaOrder order, const TaskLoss& loss) {
  GlobalStep out;
  const GradientBundle g = meta_gradient(theta, episodes, alpha, steps, order, &out.per_episode_loss, loss);
  out.query_loss = g.loss;
  out.theta = apply_update(theta, g, beta);
  return out;
}

std::string MetaResult::trace_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "iteration";
  if (!trace.empty()) {
    for (const auto& [city, loss] : trace.front().city_loss) out << ',' << city;
  }
  out << ",sum\n";
  for (const auto& row : trace) {
    out << row.iteration;
    for (const auto& [city, loss] : row.city_loss) out << ',' << loss;
    out << ',' << row.total << '\n';
  }
  return out.str();
}

MetaResult meta_train(std::span<const CityDataset> cities, const std::string& target_id, const MetaConfig& config,
                      const Architecture& arch, const GammaTable* gammas_override) {
  if (!(config.alpha >= 0.0) || !(config.beta >= 0.0)) throw ConfigError("learning rates must be non-negative");
  if (config.iterations < 0) throw ConfigError("Iter must be >= 0");
  if (arch.has_poi_channel() || !arch.has_category_channel()) {
    throw ConfigError("meta-training works on a category-only model");
  }
  find_city(cities, target_id);

  MetaResult result;
  result.gammas = gammas_override ? *gammas_override
                                  : correlation_gammas(cities, target_id, config.gamma_floor, config.use_correlation);
  result.state = init_model(arch, derive_seed(config.seed, "meta.init"));
  std::mt19937_64 rng(derive_seed(config.seed, "meta.sample"));

  for (int it = 0; it < config.iterations; ++it) {
    const auto episodes = sample_task_batch(cities, result.gammas, config.support_size, config.city_batch, rng);
    for (const auto& ep : episodes) result.sampled_with_replacement |= ep.with_replacement;
    GlobalStep step = global_update(result.state, episodes, config.alpha, config.beta, config.local_steps,
                                    config.order);
    if (!std::isfinite(step.query_loss) || !all_finite(step.theta)) {
      throw MetaTrainingDiverged("non-finite meta loss at iteration " + std::to_string(it), result.state, it);
    }
    MetaTraceRow row;
    row.iteration = it;
    for (std::size_t e = 0; e < episodes.size(); ++e) row.city_loss.emplace_back(episodes[e].city_id, step.per_episode_loss[e]);
    row.total = step.query_loss;
    result.trace.push_back(std::move(row));
    result.state = std::move(step.theta);
  }
  return result;
}

ModelState freeze_and_extend(const ModelState& meta_model, const FreezeConfig& fc, std::uint64_t seed) {
  const Architecture& src = meta_model.arch;
  if (!src.has_category_channel()) throw ConfigError("freeze_and_extend needs a category channel");
  const int total_layers = 1 + src.cat_layers;
  if (fc.frozen_layers < 1 || fc.frozen_layers > total_layers) {
    throw ConfigError("frozen layer count l=" + std::to_string(fc.frozen_layers) + " outside [1, " +
                      std::to_string(total_layers) + "]");
  }
  if (fc.added_layers < 0) throw ConfigError("added layer count n must be >= 0");

  const int frozen_rnn = fc.frozen_layers - 1;
  const int kept_rnn = fc.keep_discarded ? src.cat_layers - frozen_rnn : 0;
  Architecture arch = src;
  arch.cat_layers = frozen_rnn + kept_rnn + fc.added_layers;
  if (arch.cat_layers == 0) {
    throw ConfigError("l=1 with n=0 leaves the category channel without a recurrent layer");
  }

  ModelState out = init_model(arch, seed);
  auto copy_frozen = [&](const std::string& dst, const std::string& from, bool freeze) {
    copy_tensor(out, dst, meta_model, from);
    out.frozen[static_cast<std::size_t>(out.find(dst))] = freeze;
  };
  copy_frozen("cat.embed.category", "cat.embed.category", true);
  copy_frozen("cat.embed.time", "cat.embed.time", true);
  for (int k = 0; k < frozen_rnn + kept_rnn; ++k) {
    const auto names = rnn_group_names(Channel::kCategory, k);
    for (const auto& n : names) copy_frozen(n, n, k < frozen_rnn);
  }
  copy_frozen("cat.head.W", "cat.head.W", false);
  copy_frozen("cat.head.b", "cat.head.b", false);
  for (std::size_t g = 0; g < meta_model.layout.tensors.size(); ++g) {
    const auto& name = meta_model.layout.tensors[g].name;
    if (!is_category_group(name)) copy_frozen(name, name, meta_model.frozen[g]);
  }
  return out;
}

FineTuneResult fine_tune(const ModelState& model, const CityDataset& target, const FreezeConfig& fc,
                         std::uint64_t seed) {
  FineTuneResult out{model, {}};
  if (fc.finetune_epochs <= 0) return out;
  const auto train = target.train();
  if (train.empty()) throw DataError("target city has an empty training split");
  std::mt19937_64 rng(seed);
  Adam opt(fc.finetune_lr);
  for (int epoch = 0; epoch < fc.finetune_epochs; ++epoch) {
    double loss = 0.0;
    std::size_t batches = 0;
    for (const auto& batch : shuffled_batches(train, fc.batch_size, rng)) {
      const GradientBundle g = compute_gradients(out.state, batch, kCategoryTask);
      opt.step(out.state, g);
      loss += g.loss;
      ++batches;
    }
    out.epoch_loss.push_back(loss / static_cast<double>(batches));
    if (!std::isfinite(out.epoch_loss.back())) throw NumericalError("non-finite loss while fine-tuning");
  }
  return out;
}

TargetTrainResult train_target_model(const ModelState* category_channel, const CityDataset& target,
                                     const Architecture& base_arch, const TrainConfig& tc, std::uint64_t seed) {
  Architecture arch = base_arch;
  arch.cat_layers = category_channel ? category_channel->arch.cat_layers : 0;
  if (category_channel && !category_channel->arch.has_category_channel()) {
    throw ConfigError("category channel model has no category layers");
  }
  arch.poi_layers = tc.poi_layers;
  arch.num_pois = target.num_pois();
  if (category_channel) {
    arch.embed_dim = category_channel->arch.embed_dim;
    arch.hidden = category_channel->arch.hidden;
  }

  TargetTrainResult out;
  out.state = init_model(arch, derive_seed(seed, "target.init"));
  if (category_channel) {
    for (std::size_t g = 0; g < category_channel->layout.tensors.size(); ++g) {
      const auto& name = category_channel->layout.tensors[g].name;
      if (!is_category_group(name)) continue;
      copy_tensor(out.state, name, *category_channel, name);
      out.state.frozen[static_cast<std::size_t>(out.state.find(name))] = true;
    }
  }
  if (tc.epochs <= 0) return out;

  const auto train = target.train();
  if (train.empty()) throw DataError("target city has an empty training split");
  const auto val = target.validation();
  const TaskSpec task{Task::kPoi, tc.all_prefix};
  std::mt19937_64 rng(derive_seed(seed, "target.shuffle"));
  Adam opt(tc.lr);
  ModelState best = out.state;
  double best_hr = -1.0;
  int since_best = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    double loss = 0.0;
    std::size_t batches = 0;
    for (const auto& batch : shuffled_batches(train, tc.batch_size, rng)) {
      const GradientBundle g = compute_gradients(out.state, batch, task);
      opt.step(out.state, g);
      loss += g.loss;
      ++batches;
    }
    out.epoch_loss.push_back(loss / static_cast<double>(batches));
    if (!std::isfinite(out.epoch_loss.back())) throw NumericalError("non-finite loss while training target model");
    if (val.empty()) continue;
    const auto ranks = model_ranks(out.state, val);
    const double hr = hit_ratio_at_k(ranks, 10);
    out.validation_hr10.push_back(hr);
    if (hr > best_hr) {
      best_hr = hr;
      best = out.state;
      out.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      break;
    }
  }
  if (!val.empty()) {
    out.state = std::move(best);
  } else {
    out.best_epoch = static_cast<int>(out.epoch_loss.size()) - 1;
  }
  return out;
}

}  // namespace metapoi
