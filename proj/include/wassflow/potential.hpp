#pragma once

#include <span>

#include "wassflow/common.hpp"
#include "wassflow/numkit.hpp"

namespace wassflow::potential {

enum class Kind { quadratic, styblinski_tang, rosenbrock };

// Closed enumeration of potentials so the exact-solution oracles can pattern
// match on the quadratic variant.
struct PotentialSpec {
  Kind kind = Kind::quadratic;
  int dim = 1;
  double beta = 1.0;

  // quadratic: V(x) = 0.5 (x-mu)^T Sigma^{-1} (x-mu)
  Vec mu;
  numkit::SmallSymMatrix sigma;

  // styblinski_tang: V(x) = scale * sum_i (x_i^4 - 16 x_i^2 + 5 x_i)
  // rosenbrock:      V(x) = scale * sum_k (curvature (x_{k+1}-x_k^2)^2 + (x_k-1)^2)
  double scale = 3.0 / 50.0;
  double curvature = 10.0;

  static PotentialSpec quadratic(Vec mu, numkit::SmallSymMatrix sigma, double beta);
  static PotentialSpec styblinski_tang(int dim, double beta, double scale = 3.0 / 50.0);
  static PotentialSpec rosenbrock(int dim, double beta, double scale = 3.0 / 50.0,
                                  double curvature = 10.0);

  // Smallest eigenvalue of Sigma^{-1} (quadratic only).
  double quadratic_lambda_min() const;

  // Factorization of Sigma, computed once by the quadratic factory.
  numkit::Cholesky sigma_chol;
  double lambda_min_cache = 0.0;
};

double potential_value(const PotentialSpec& spec, std::span<const double> x);
void potential_grad(const PotentialSpec& spec, std::span<const double> x, std::span<double> g);

}  // namespace wassflow::potential
