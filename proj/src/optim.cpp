#include "metapoi/optim.hpp"

#include <cmath>

#include "metapoi/errors.hpp"

namespace metapoi {

void Adam::step(ModelState& state, const GradientBundle& bundle) {
  if (bundle.grads.size() != state.values.size()) throw ShapeError("gradient bundle group count mismatch");
  if (m_.empty()) {
    for (const auto& t : state.values) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t g = 0; g < state.values.size(); ++g) {
    if (state.frozen[g]) continue;
    auto& w = state.values[g];
    const auto& grad = bundle.grads[g];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[g][i] = beta1_ * m_[g][i] + (1.0 - beta1_) * grad[i];
      v_[g][i] = beta2_ * v_[g][i] + (1.0 - beta2_) * grad[i] * grad[i];
      w[i] -= lr_ * (m_[g][i] / c1) / (std::sqrt(v_[g][i] / c2) + eps_);
    }
  }
}

}  // namespace metapoi
