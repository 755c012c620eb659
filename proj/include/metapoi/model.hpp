#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metapoi/data.hpp"

namespace metapoi {

/// Shape of a two-channel model. A channel with zero recurrent layers is
/// absent: the meta-learner trains a category-only model, the w/o-cat
/// ablation trains a POI-only model.
struct Architecture {
  int embed_dim = 16;
  int hidden = 16;
  int cat_layers = 3;
  int poi_layers = 0;
  int num_pois = 0;

  bool has_category_channel() const { return cat_layers > 0; }
  bool has_poi_channel() const { return poi_layers > 0; }
  bool operator==(const Architecture&) const = default;
};

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  bool operator==(const TensorSpec&) const = default;
};

/// Index of every parameter group in a flat tensor list. Recurrent layers are
/// stored as three consecutive groups W (4h x in), U (4h x h), b (4h).
struct Layout {
  std::vector<TensorSpec> tensors;
  int cat_embed = -1;
  int cat_time = -1;
  std::vector<int> cat_rnn;
  int cat_head_w = -1;
  int cat_head_b = -1;
  int poi_embed = -1;
  int dist_embed = -1;
  int poi_time = -1;
  std::vector<int> poi_rnn;
  int decoder_w = -1;
  int decoder_b = -1;
  bool operator==(const Layout&) const = default;
};

Layout make_layout(const Architecture& arch);

enum class Channel { kCategory, kPoi };

/// All learnable parameters plus per-group freeze flags. Treated as a value:
/// updates return a new state.
struct ModelState {
  Architecture arch;
  Layout layout;
  std::vector<std::vector<double>> values;
  std::vector<bool> frozen;

  int find(const std::string& name) const;  // -1 when absent
  const std::vector<double>& tensor(const std::string& name) const;
  std::vector<double>& tensor(const std::string& name);
  std::size_t num_parameters() const;
  bool operator==(const ModelState&) const = default;
};

/// Parameters drawn uniformly from [-1/sqrt(h), 1/sqrt(h)].
ModelState init_model(const Architecture& arch, std::uint64_t seed);

/// Copies src tensor into dst tensor of the same shape, keeping dst's freeze flag.
void copy_tensor(ModelState& dst, const std::string& dst_name, const ModelState& src,
                 const std::string& src_name);

/// Names of the groups that make up recurrent layer `layer` of a channel.
std::vector<std::string> rnn_group_names(Channel channel, int layer);
bool is_category_group(const std::string& name);

using SequenceBatch = std::vector<const DaySequencePair*>;
SequenceBatch as_batch(std::span<const DaySequencePair> sequences);

enum class Task {
  kCategory,  // predict c_{k+1} after every prefix
  kPoi,       // predict the final POI from steps 1..n-1
};

struct TaskSpec {
  Task task = Task::kCategory;
  bool all_prefix = false;  // kPoi only: also predict p_{k+1} after every shorter prefix
};

struct EncodedSequence {
  std::vector<std::vector<double>> hidden_states;
  std::vector<double> final_state;
};

/// Gradients aligned with ModelState::values. Frozen groups hold zeros.
struct GradientBundle {
  std::vector<std::vector<double>> grads;
  double loss = 0.0;
};

inline constexpr double kProbabilityFloor = 1e-12;

std::vector<double> embed_category_step(const ModelState& state, const CategoryStep& step);
std::vector<double> embed_poi_step(const ModelState& state, const PoiStep& step);

EncodedSequence encode_sequence(const ModelState& state, Channel channel,
                                const std::vector<std::vector<double>>& embedded);

std::vector<double> category_head_logits(const ModelState& state, std::span<const double> final_state);

/// softmax(decoder([cat_final; poi_final])). `cat_final` is ignored (and may
/// be empty) for a model without a category channel.
std::vector<double> decode_next_poi(const ModelState& state, std::span<const double> cat_final,
                                    std::span<const double> poi_final);

std::vector<double> softmax(std::span<const double> logits);

/// -log(max(probs[truth], 1e-12)).
double cross_entropy(std::span<const double> probs, int truth);

/// Next-POI distribution after observing steps 1..n-1 of `seq`.
std::vector<double> predict_next_poi(const ModelState& state, const DaySequencePair& seq);

double compute_loss(const ModelState& state, const SequenceBatch& batch, TaskSpec task);
GradientBundle compute_gradients(const ModelState& state, const SequenceBatch& batch, TaskSpec task);

/// H·v of the batch loss at `state`; frozen groups of v are ignored and of
/// the result are zero.
std::vector<std::vector<double>> hessian_vector_product(const ModelState& state, const SequenceBatch& batch,
                                                        TaskSpec task,
                                                        const std::vector<std::vector<double>>& v);

/// group <- group - lr * grad for every unfrozen group.
ModelState apply_update(const ModelState& state, const GradientBundle& bundle, double lr);

}  // namespace metapoi
