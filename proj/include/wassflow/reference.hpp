#pragma once

#include <functional>

#include "wassflow/common.hpp"
#include "wassflow/numkit.hpp"
#include "wassflow/potential.hpp"

namespace wassflow::reference {

struct GaussianState {
  Vec mean;
  numkit::SmallSymMatrix cov;
};

// Affine map y = gamma x + b with det(gamma) > 0 (general, not symmetric).
struct AffineState {
  int dim = 0;
  Vec gamma;  // row-major d x d
  Vec b;
};

// Exact Ornstein-Uhlenbeck marginal for the quadratic potential:
//   m(t) = mu + e^{-Sigma^{-1} t} (m0 - mu)
//   S(t) = beta Sigma + e^{-Sigma^{-1} t} (S0 - beta Sigma) e^{-Sigma^{-1} t}
// valid when Sigma and S0 commute (checked to 1e-10).
GaussianState ou_exact(const potential::PotentialSpec& quadratic, double beta,
                       const GaussianState& init, double t);

// RK4 on Gamma' = -Sigma^{-1} Gamma + beta Gamma^{-T}, b' = Sigma^{-1}(mu - b).
// Returns states at 0, h, 2h, ..., steps*h.
std::vector<AffineState> affine_ode_solve(const potential::PotentialSpec& quadratic,
                                          double beta, const AffineState& init, double rk4_h,
                                          int steps);

GaussianState affine_pushforward(const AffineState& s);  // N(b, Gamma Gamma^T)

// X <- X - grad V(X) dt + sqrt(2 beta dt) xi per step; beta >= 0.
numkit::SampleBatch euler_maruyama(const potential::PotentialSpec& pot, double beta,
                                   const numkit::SampleBatch& x0, double dt, int steps,
                                   numkit::Rng& rng);

// Same stepper with an arbitrary drift (test hook for zero potential).
numkit::SampleBatch euler_maruyama_drift(
    const std::function<void(std::span<const double>, std::span<double>)>& drift, double beta,
    const numkit::SampleBatch& x0, double dt, int steps, numkit::Rng& rng);

// Bures / closed-form Gaussian distances.
double gaussian_w2(const GaussianState& a, const GaussianState& b);
double gaussian_kl(const GaussianState& a, const GaussianState& b);

// Gibbs distribution of a quadratic potential: N(mu, beta Sigma).
GaussianState gibbs_gaussian(const potential::PotentialSpec& quadratic, double beta);

}  // namespace wassflow::reference
