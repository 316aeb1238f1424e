#include "wassflow/potential.hpp"

#include <cmath>

namespace wassflow::potential {

PotentialSpec PotentialSpec::quadratic(Vec mu, numkit::SmallSymMatrix sigma, double beta) {
  PotentialSpec s;
  s.kind = Kind::quadratic;
  s.dim = static_cast<int>(mu.size());
  s.beta = beta;
  s.mu = std::move(mu);
  s.sigma = std::move(sigma);
  if (s.sigma.size() != s.dim) throw Error("quadratic potential: mu/sigma dimension mismatch");
  if (beta <= 0.0) throw Error("potential: beta must be positive");
  s.sigma_chol = numkit::cholesky(s.sigma);
  s.lambda_min_cache = 1.0 / numkit::eigh(s.sigma).values.back();
  return s;
}

PotentialSpec PotentialSpec::styblinski_tang(int dim, double beta, double scale) {
  if (dim < 1 || beta <= 0.0 || scale <= 0.0) throw Error("styblinski_tang: invalid parameters");
  PotentialSpec s;
  s.kind = Kind::styblinski_tang;
  s.dim = dim;
  s.beta = beta;
  s.scale = scale;
  return s;
}

PotentialSpec PotentialSpec::rosenbrock(int dim, double beta, double scale, double curvature) {
  if (dim < 2 || beta <= 0.0 || scale <= 0.0) throw Error("rosenbrock: invalid parameters");
  PotentialSpec s;
  s.kind = Kind::rosenbrock;
  s.dim = dim;
  s.beta = beta;
  s.scale = scale;
  s.curvature = curvature;
  return s;
}

double PotentialSpec::quadratic_lambda_min() const {
  if (kind != Kind::quadratic) throw Error("quadratic_lambda_min: not a quadratic potential");
  return lambda_min_cache;
}

double potential_value(const PotentialSpec& spec, std::span<const double> x) {
  if (static_cast<int>(x.size()) != spec.dim) throw Error("potential_value: dimension mismatch");
  switch (spec.kind) {
    case Kind::quadratic: {
      Vec r(spec.dim);
      for (int i = 0; i < spec.dim; ++i) r[i] = x[i] - spec.mu[i];
      Vec si = spec.sigma_chol.solve(r);
      double acc = 0.0;
      for (int i = 0; i < spec.dim; ++i) acc += r[i] * si[i];
      return 0.5 * acc;
    }
    case Kind::styblinski_tang: {
      double acc = 0.0;
      for (double xi : x) {
        double x2 = xi * xi;
        acc += x2 * x2 - 16.0 * x2 + 5.0 * xi;
      }
      return spec.scale * acc;
    }
    case Kind::rosenbrock: {
      double acc = 0.0;
      for (int k = 0; k + 1 < spec.dim; ++k) {
        double r1 = x[k + 1] - x[k] * x[k];
        double r2 = x[k] - 1.0;
        acc += spec.curvature * r1 * r1 + r2 * r2;
      }
      return spec.scale * acc;
    }
  }
  throw Error("potential_value: unknown kind");
}

void potential_grad(const PotentialSpec& spec, std::span<const double> x, std::span<double> g) {
  if (static_cast<int>(x.size()) != spec.dim || g.size() != x.size())
    throw Error("potential_grad: dimension mismatch");
  switch (spec.kind) {
    case Kind::quadratic: {
      Vec r(spec.dim);
      for (int i = 0; i < spec.dim; ++i) r[i] = x[i] - spec.mu[i];
      Vec si = spec.sigma_chol.solve(r);
      for (int i = 0; i < spec.dim; ++i) g[i] = si[i];
      return;
    }
    case Kind::styblinski_tang: {
      for (int i = 0; i < spec.dim; ++i) {
        double xi = x[i];
        g[i] = spec.scale * (4.0 * xi * xi * xi - 32.0 * xi + 5.0);
      }
      return;
    }
    case Kind::rosenbrock: {
      for (int i = 0; i < spec.dim; ++i) g[i] = 0.0;
      for (int k = 0; k + 1 < spec.dim; ++k) {
        double r1 = x[k + 1] - x[k] * x[k];
        g[k] += spec.scale * (-4.0 * spec.curvature * r1 * x[k] + 2.0 * (x[k] - 1.0));
        g[k + 1] += spec.scale * 2.0 * spec.curvature * r1;
      }
      return;
    }
  }
  throw Error("potential_grad: unknown kind");
}

}  // namespace wassflow::potential
