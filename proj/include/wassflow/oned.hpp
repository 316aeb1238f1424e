#pragma once

#include "wassflow/common.hpp"
#include "wassflow/flow.hpp"
#include "wassflow/numkit.hpp"
#include "wassflow/potential.hpp"

namespace wassflow::oned {

// Gauss-Hermite rule adapted to the weight e^{-x^2/2}/sqrt(2 pi); replaces
// Monte Carlo for all 1D integrals so diagnostics are noise-free.
struct Quadrature {
  Vec nodes;
  Vec weights;  // sum to 1
  static Quadrature gauss_hermite(int order = 100);
};

// A monotone 1D map with analytic T, T', T'' and parameter derivatives of T
// and T'. The affine variant realizes T(x) = theta1 x + theta2 (theta1 > 0);
// the planar variant wraps a d=1 planar flow with 3 parameters per layer.
class Flow1D {
public:
  static Flow1D affine(double theta1, double theta2);
  static Flow1D planar(flow::FlowParams params);

  bool is_affine() const { return affine_; }
  int param_count() const;
  Vec params() const;                // flat view
  Flow1D with_params(const Vec& p) const;  // same family, new parameters

  struct Eval {
    double value = 0.0;   // T(x)
    double deriv = 0.0;   // T'(x)
    double deriv2 = 0.0;  // T''(x)
    Vec d_theta;          // dT/dtheta
    Vec d_theta_deriv;    // dT'/dtheta
  };
  Eval eval(double x) const;

private:
  bool affine_ = true;
  double theta1_ = 1.0, theta2_ = 0.0;
  flow::FlowParams planar_;
};

// G(theta) = E_p[ dT/dtheta (dT/dtheta)^T ], the explicit 1D metric tensor.
numkit::SmallSymMatrix metric_1d(const Flow1D& flow, const Quadrature& quad);

// H(theta) = E_p[ V(T(x)) + beta (log p(x) - log T'(x)) ] by quadrature.
double entropy_1d(const Flow1D& flow, const potential::PotentialSpec& pot,
                  const Quadrature& quad);

// gradient of entropy_1d: E_p[ V'(T) dT/dtheta - beta dT'/dtheta / T' ].
Vec grad_H_1d(const Flow1D& flow, const potential::PotentialSpec& pot,
              const Quadrature& quad);

struct Delta1Breakdown {
  double fisher_term = 0.0;    // E_p[ (V'(T) + beta d/dy log rho_theta (T))^2 ]
  double gradient_term = 0.0;  // grad H^T G^{-1} grad H
  double residual = 0.0;       // max(0, fisher - gradient)
};
Delta1Breakdown delta1_residual_1d(const Flow1D& flow, const potential::PotentialSpec& pot,
                                   const Quadrature& quad);

// Forward Euler on theta' = -G(theta)^{-1} grad H(theta); trajectory includes
// the initial state. The metric solve uses Cholesky with 1e-12 jitter and
// refuses condition numbers above 1e12.
std::vector<Flow1D> forward_euler_solve_1d(const Flow1D& flow0,
                                           const potential::PotentialSpec& pot, double h,
                                           int steps, const Quadrature& quad);

}  // namespace wassflow::oned
