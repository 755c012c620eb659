#pragma once

#include <vector>

#include "metapoi/model.hpp"

namespace metapoi {

/// Adam over the unfrozen groups of a ModelState. Used by the supervised
/// stages (fine-tuning, target training); the meta-learner takes plain
/// gradient steps.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelState& state, const GradientBundle& bundle);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace metapoi
