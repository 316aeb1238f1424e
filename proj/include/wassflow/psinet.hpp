#pragma once

#include <span>

#include "wassflow/common.hpp"
#include "wassflow/numkit.hpp"

namespace wassflow::psinet {

// Fully-connected ReLU network mapping R^d -> R. The default shape is six
// affine layers of hidden width 20 (ReLU after the first five); tests use
// smaller shapes, including the single affine layer where everything has a
// closed form.
struct PsiParams {
  struct Layer {
    Vec W;  // out x in, row-major
    Vec b;  // out
  };
  std::vector<int> widths;
  std::vector<Layer> layers;

  static std::vector<int> default_widths(int dim);
  static PsiParams zeros(std::vector<int> widths);
  static PsiParams he_init(std::vector<int> widths, numkit::Rng& rng);

  // He-initialized hidden stack with a zero output layer: the represented
  // gradient field starts exactly at zero (matching the zero displacement
  // targets at the start of a time step) while every layer stays trainable.
  static PsiParams he_init_zero_last(std::vector<int> widths, numkit::Rng& rng);

  int dim() const { return widths.front(); }
  int param_count() const;

  // Flat layout: for each layer in order, W row-major, then b.
  Vec to_flat() const;
  static PsiParams from_flat(std::vector<int> widths, const Vec& flat);

  bool all_finite() const;
};

// Reusable scratch for batch passes; sized on demand.
struct PsiWorkspace {
  std::vector<Vec> preact;  // A_l, K x n_l, hidden layers only
  std::vector<Vec> act;     // Z_l, K x n_l, act[0] is the input
  std::vector<Vec> rbuf;    // gradient chain from the output side
  std::vector<Vec> ubuf;    // cotangent chain from the input side
  Vec grads;                // K x d input gradients
  Vec values;               // K psi values
};

double psi_forward(const PsiParams& lam, std::span<const double> x);
Vec psi_input_grad(const PsiParams& lam, std::span<const double> x);

// Batch passes over row-major points (count x dim).
void psi_value_batch(const PsiParams& lam, const Vec& points, int count, PsiWorkspace& ws);
void psi_input_grad_batch(const PsiParams& lam, const Vec& points, int count, PsiWorkspace& ws);

// inner_loss = mean_k |grad psi(y_k) - v_k|^2 with y = eval_points, v = target.
double inner_loss(const PsiParams& lam, const Vec& target, const Vec& eval_points, int count);

// Gradient of inner_loss in every weight; activation masks are held constant
// at the evaluation point, so ReLU biases receive exactly zero gradient.
struct InnerLossResult {
  double loss = 0.0;
  Vec grad;  // flat layout of PsiParams
};
InnerLossResult inner_loss_grad_lambda(const PsiParams& lam, const Vec& target,
                                       const Vec& eval_points, int count, PsiWorkspace& ws);

}  // namespace wassflow::psinet
