#pragma once

#include "wassflow/common.hpp"

namespace wassflow::optim {

// Adam with the original placement of eps (added after the square root).
struct AdamState {
  Vec m;
  Vec v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(std::size_t n);
};

// In-place update of params; advances the state.
void adam_step(AdamState& state, Vec& params, const Vec& grad, double lr);

void sgd_step(Vec& params, const Vec& grad, double lr);

}  // namespace wassflow::optim
