#pragma once

#include <cmath>
#include <string>

#include "densebasis/matrix.hpp"

namespace densebasis {

struct MomentDecays {
  double first = 0.9;
  double second = 0.999;
};

/// First and second moment estimates for bias-corrected adaptive steps.
struct AdamState {
  Vector first;
  Vector second;
  long step = 0;

  explicit AdamState(Index n = 0) : first(Vector::Zero(n)), second(Vector::Zero(n)) {}
};

/// One adaptive-moment update of `params` in place:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   params -= lr * m_hat / (sqrt(v_hat) + eps)
/// With both decays at 0 this is lr * g / (|g| + eps), i.e. a sign step.
/// Throws AbortStep (nothing is modified) if the gradient is not finite.
inline void optimizer_step(Vector& params, const Vector& grad, AdamState& state, double lr, MomentDecays decays,
                           double eps = 1e-8) {
  require(grad.size() == params.size() && state.first.size() == params.size() &&
              state.second.size() == params.size(),
          "optimizer_step: state and gradient sizes must match the parameters");
  for (Index i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw AbortStep("optimizer_step: non-finite gradient at parameter " + std::to_string(i) + " (value " +
                      std::to_string(grad[i]) + ")");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(decays.first, t);
  const double c2 = 1.0 - std::pow(decays.second, t);
  for (Index i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.first[i] = decays.first * state.first[i] + (1.0 - decays.first) * g;
    state.second[i] = decays.second * state.second[i] + (1.0 - decays.second) * g * g;
    const double m_hat = state.first[i] / c1;
    const double v_hat = state.second[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace densebasis
