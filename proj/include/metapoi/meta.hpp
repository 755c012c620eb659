#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "metapoi/data.hpp"
#include "metapoi/errors.hpp"
#include "metapoi/model.hpp"

namespace metapoi {

enum class MetaOrder { kFirst, kSecond };

struct MetaConfig {
  double alpha = 0.1;        // local (inner) learning rate
  double beta = 0.05;        // global (outer) learning rate
  int support_size = 32;     // N: sequences per support set and per query set
  int iterations = 500;      // Iter
  int city_batch = 0;        // cities per iteration, 0 = all
  int local_steps = 1;
  MetaOrder order = MetaOrder::kFirst;
  double gamma_floor = 0.05;
  bool use_correlation = true;  // false: every gamma is 1 (plain MAML)
  std::uint64_t seed = 1;
};

/// Layer counting: the embedding layer is layer 1, recurrent layers are
/// 2..L. Freezing l layers keeps the embedding plus l-1 recurrent layers.
struct FreezeConfig {
  int frozen_layers = 3;   // l
  int added_layers = 2;    // n
  bool keep_discarded = false;  // keep layers l+1..L trainable instead of dropping them
  int finetune_epochs = 5;
  double finetune_lr = 0.005;
  int batch_size = 32;
};

struct TrainConfig {
  int epochs = 20;
  double lr = 0.005;
  int batch_size = 32;
  int patience = 3;          // epochs without validation HR@10 gain before stopping
  bool all_prefix = false;
  int poi_layers = 1;
};

using GammaTable = std::map<std::string, double>;

/// gamma per city: behavioural-transition Pearson against the target (train
/// splits), clamped to [floor, 1]; the target itself gets 1.
GammaTable correlation_gammas(std::span<const CityDataset> cities, const std::string& target_id, double floor,
                              bool use_correlation = true);

struct TaskEpisode {
  std::string city_id;
  double gamma_cor = 1.0;
  SequenceBatch support;
  SequenceBatch query;
  bool with_replacement = false;
};

std::vector<TaskEpisode> sample_task_batch(std::span<const CityDataset> cities, const GammaTable& gammas,
                                           int support_size, int city_batch, std::mt19937_64& rng);

/// The support/query loss seen by the update rules. The default is
/// teacher-forced next-category prediction.
class TaskLoss {
 public:
  virtual ~TaskLoss() = default;
  virtual double value(const ModelState& theta, const SequenceBatch& batch) const = 0;
  virtual GradientBundle gradient(const ModelState& theta, const SequenceBatch& batch) const = 0;
  virtual std::vector<std::vector<double>> hessian_vector(const ModelState& theta, const SequenceBatch& batch,
                                                          const std::vector<std::vector<double>>& v) const = 0;
};

const TaskLoss& category_task_loss();

/// theta' = theta - (alpha * gamma) * grad L_support, repeated `steps` times.
/// When `trajectory` is given it receives theta_0..theta_{steps-1}.
ModelState local_update(const ModelState& theta, const TaskEpisode& episode, double alpha, int steps,
                        std::vector<ModelState>* trajectory = nullptr,
                        const TaskLoss& loss = category_task_loss());

/// d/dtheta of sum_m L_query(theta'_m). First order evaluates each query
/// gradient at theta'_m; second order back-propagates it through the inner
/// steps with Hessian-vector products. `loss` holds the summed query loss.
GradientBundle meta_gradient(const ModelState& theta, const std::vector<TaskEpisode>& episodes, double alpha,
                             int steps, MetaOrder order, std::vector<double>* per_episode_loss = nullptr,
                             const TaskLoss& loss = category_task_loss());

/// Composite objective sum_m L_query(local_update(theta, m)); no gradients.
double meta_objective(const ModelState& theta, const std::vector<TaskEpisode>& episodes, double alpha, int steps,
                      const TaskLoss& loss = category_task_loss());

struct GlobalStep {
  ModelState theta;
  double query_loss = 0.0;
  std::vector<double> per_episode_loss;
};

GlobalStep global_update(const ModelState& theta, const std::vector<TaskEpisode>& episodes, double alpha,
                         double beta, int steps, MetaOrder order,
                         const TaskLoss& loss = category_task_loss());

struct MetaTraceRow {
  int iteration = 0;
  std::vector<std::pair<std::string, double>> city_loss;
  double total = 0.0;
};

struct MetaResult {
  ModelState state;
  GammaTable gammas;
  std::vector<MetaTraceRow> trace;
  bool sampled_with_replacement = false;

  std::string trace_csv() const;
};

class MetaTrainingDiverged : public NumericalError {
 public:
  MetaTrainingDiverged(const std::string& what, ModelState last_finite, int iteration)
      : NumericalError(what), last_finite(std::move(last_finite)), iteration(iteration) {}
  ModelState last_finite;
  int iteration;
};

/// Category-level meta-training over all cities (auxiliary and target).
/// `arch` must describe a category-only model.
MetaResult meta_train(std::span<const CityDataset> cities, const std::string& target_id, const MetaConfig& config,
                      const Architecture& arch, const GammaTable* gammas_override = nullptr);

/// Keeps layers 1..l (frozen), optionally keeps l+1..L trainable, appends n
/// fresh recurrent layers. The category head stays trainable.
ModelState freeze_and_extend(const ModelState& meta_model, const FreezeConfig& fc, std::uint64_t seed);

struct FineTuneResult {
  ModelState state;
  std::vector<double> epoch_loss;
};

/// Next-category training on the target's training split, unfrozen groups only.
FineTuneResult fine_tune(const ModelState& model, const CityDataset& target, const FreezeConfig& fc,
                         std::uint64_t seed);

struct TargetTrainResult {
  ModelState state;
  std::vector<double> epoch_loss;
  std::vector<double> validation_hr10;
  int best_epoch = 0;
};

/// Builds the POI channel and decoder on top of `category_channel` (which is
/// frozen entirely) and trains them on the next-POI objective. Pass a model
/// without a category channel (nullptr) for the POI-only variant.
TargetTrainResult train_target_model(const ModelState* category_channel, const CityDataset& target,
                                     const Architecture& base_arch, const TrainConfig& tc, std::uint64_t seed);

}  // namespace metapoi
