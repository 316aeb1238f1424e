#include "wassflow/optim.hpp"

#include <cmath>

#include "wassflow/simd_kernels.hpp"

namespace wassflow::optim {

AdamState AdamState::for_size(std::size_t n) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_step(AdamState& state, Vec& params, const Vec& grad, double lr) {
  if (params.size() != grad.size() || params.size() != state.m.size())
    throw Error("adam_step: length mismatch");
  if (!(lr > 0.0)) throw Error("adam_step: lr must be positive");
  state.t += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  kern::active().adam_update(params.data(), state.m.data(), state.v.data(), grad.data(),
                             params.size(), lr, state.beta1, state.beta2, state.eps, bc1, bc2);
}

void sgd_step(Vec& params, const Vec& grad, double lr) {
  if (params.size() != grad.size()) throw Error("sgd_step: length mismatch");
  kern::active().axpy(-lr, grad.data(), params.data(), params.size());
}

}  // namespace wassflow::optim
