#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include <Eigen/Core>

namespace d2gv {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for one flat parameter block.
struct AdamMoments {
  Eigen::ArrayXd m;
  Eigen::ArrayXd v;
  long step = 0;

  explicit AdamMoments(Eigen::Index n = 0) : m(Eigen::ArrayXd::Zero(n)), v(Eigen::ArrayXd::Zero(n)) {}
};

/// One bias-corrected Adam update of `param` in place.
template <typename ParamDerived, typename GradDerived>
void adam_step(Eigen::ArrayBase<ParamDerived>& param, const Eigen::ArrayBase<GradDerived>& grad, AdamMoments& state,
               double lr, const AdamParams& hp = {}) {
  ++state.step;
  state.m = hp.beta1 * state.m + (1 - hp.beta1) * grad;
  state.v = hp.beta2 * state.v + (1 - hp.beta2) * grad.square();
  const double c1 = 1 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1 - std::pow(hp.beta2, static_cast<double>(state.step));
  param -= lr * (state.m / c1) / ((state.v / c2).sqrt() + hp.eps);
}

/// lr0 * (lr1 / lr0)^(step / horizon), held at lr1 past the horizon.
inline double exponential_lr(double lr0, double lr1, long step, long horizon) {
  if (horizon <= 0) return lr1;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(horizon));
  return std::exp((1 - frac) * std::log(lr0) + frac * std::log(lr1));
}

}  // namespace d2gv
