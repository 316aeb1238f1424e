#include "wassflow/reference.hpp"

#include <cmath>

namespace wassflow::reference {

namespace {

using numkit::SmallSymMatrix;

// Minimal dense d x d helpers for the affine ODE (row-major).
Vec mat_mul(const Vec& a, const Vec& b, int n) {
  Vec c(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double aik = a[static_cast<std::size_t>(i) * n + k];
      for (int j = 0; j < n; ++j)
        c[static_cast<std::size_t>(i) * n + j] += aik * b[static_cast<std::size_t>(k) * n + j];
    }
  return c;
}

// Gauss-Jordan with partial pivoting; returns det through out param.
Vec mat_inverse(Vec a, int n, double* det_out) {
  Vec inv(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) inv[static_cast<std::size_t>(i) * n + i] = 1.0;
  double det = 1.0;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    double best = std::fabs(a[static_cast<std::size_t>(col) * n + col]);
    for (int r = col + 1; r < n; ++r) {
      double v = std::fabs(a[static_cast<std::size_t>(r) * n + col]);
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best == 0.0) throw Error("flow map degenerated");
    if (piv != col) {
      for (int j = 0; j < n; ++j) {
        std::swap(a[static_cast<std::size_t>(piv) * n + j], a[static_cast<std::size_t>(col) * n + j]);
        std::swap(inv[static_cast<std::size_t>(piv) * n + j], inv[static_cast<std::size_t>(col) * n + j]);
      }
      det = -det;
    }
    double p = a[static_cast<std::size_t>(col) * n + col];
    det *= p;
    double ip = 1.0 / p;
    for (int j = 0; j < n; ++j) {
      a[static_cast<std::size_t>(col) * n + j] *= ip;
      inv[static_cast<std::size_t>(col) * n + j] *= ip;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      double f = a[static_cast<std::size_t>(r) * n + col];
      if (f == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        a[static_cast<std::size_t>(r) * n + j] -= f * a[static_cast<std::size_t>(col) * n + j];
        inv[static_cast<std::size_t>(r) * n + j] -= f * inv[static_cast<std::size_t>(col) * n + j];
      }
    }
  }
  if (det_out) *det_out = det;
  return inv;
}

Vec transpose(const Vec& a, int n) {
  Vec t(a.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      t[static_cast<std::size_t>(j) * n + i] = a[static_cast<std::size_t>(i) * n + j];
  return t;
}

void require_quadratic(const potential::PotentialSpec& pot) {
  if (pot.kind != potential::Kind::quadratic)
    throw Error("reference: operation requires a quadratic potential");
}

}  // namespace

GaussianState ou_exact(const potential::PotentialSpec& quadratic, double beta,
                       const GaussianState& init, double t) {
  require_quadratic(quadratic);
  if (!(beta > 0.0)) throw Error("ou_exact: beta must be positive");
  const int d = quadratic.dim;
  const SmallSymMatrix& sigma = quadratic.sigma;
  const SmallSymMatrix& s0 = init.cov;
  if (s0.size() != d || static_cast<int>(init.mean.size()) != d)
    throw Error("ou_exact: dimension mismatch");

  // commuting check: Sigma S0 == S0 Sigma
  double comm = 0.0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double ab = 0.0, ba = 0.0;
      for (int k = 0; k < d; ++k) {
        ab += sigma.at(i, k) * s0.at(k, j);
        ba += s0.at(i, k) * sigma.at(k, j);
      }
      comm = std::max(comm, std::fabs(ab - ba));
    }
  if (comm > 1e-10) throw Error("exact solution requires commuting covariances");

  numkit::EigenSym e = numkit::eigh(sigma);
  // E = e^{-Sigma^{-1} t} shares Sigma's eigenvectors.
  Vec decay(d);
  for (int k = 0; k < d; ++k) {
    if (!(e.values[k] > 0.0)) throw Error("ou_exact: sigma not positive definite");
    decay[k] = std::exp(-t / e.values[k]);
  }
  auto vect = [&](int i, int k) { return e.vectors[static_cast<std::size_t>(i) * d + k]; };

  GaussianState out;
  out.mean.assign(d, 0.0);
  // mean: mu + Q diag(decay) Q^T (m0 - mu)
  Vec dm(d);
  for (int i = 0; i < d; ++i) dm[i] = init.mean[i] - quadratic.mu[i];
  for (int k = 0; k < d; ++k) {
    double proj = 0.0;
    for (int i = 0; i < d; ++i) proj += vect(i, k) * dm[i];
    proj *= decay[k];
    for (int i = 0; i < d; ++i) out.mean[i] += vect(i, k) * proj;
  }
  for (int i = 0; i < d; ++i) out.mean[i] += quadratic.mu[i];

  // covariance: beta Sigma + E (S0 - beta Sigma) E with E in Sigma's basis
  SmallSymMatrix diff = s0 - sigma.scaled(beta);
  // rotate to eigenbasis: D = Q^T diff Q
  Vec tmp(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += vect(k, i) * diff.at(k, j);
      tmp[static_cast<std::size_t>(i) * d + j] = acc;
    }
  Vec rot(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += tmp[static_cast<std::size_t>(i) * d + k] * vect(k, j);
      rot[static_cast<std::size_t>(i) * d + j] = acc * decay[i] * decay[j];
    }
  SmallSymMatrix cov(d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      double acc = beta * sigma.at(i, j);
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l)
          acc += vect(i, k) * rot[static_cast<std::size_t>(k) * d + l] * vect(j, l);
      cov.at(i, j) = acc;
    }
  cov.symmetrize();
  out.cov = cov;
  return out;
}

std::vector<AffineState> affine_ode_solve(const potential::PotentialSpec& quadratic,
                                          double beta, const AffineState& init, double rk4_h,
                                          int steps) {
  require_quadratic(quadratic);
  if (!(rk4_h > 0.0) || steps < 0) throw Error("affine_ode_solve: invalid step size");
  const int d = quadratic.dim;
  if (init.dim != d) throw Error("affine_ode_solve: dimension mismatch");

  // Sigma^{-1} once
  Vec sig(quadratic.sigma.raw());
  double det = 0.0;
  Vec sig_inv = mat_inverse(sig, d, &det);

  auto rhs = [&](const Vec& gamma, const Vec& b, Vec& dgamma, Vec& db) {
    double dg = 0.0;
    Vec ginv = mat_inverse(gamma, d, &dg);
    if (dg < 1e-12) throw Error("flow map degenerated");
    Vec ginvT = transpose(ginv, d);
    Vec si_g = mat_mul(sig_inv, gamma, d);
    dgamma.resize(static_cast<std::size_t>(d) * d);
    for (std::size_t i = 0; i < dgamma.size(); ++i) dgamma[i] = -si_g[i] + beta * ginvT[i];
    db.assign(d, 0.0);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        db[i] += sig_inv[static_cast<std::size_t>(i) * d + j] * (quadratic.mu[j] - b[j]);
  };

  std::vector<AffineState> traj;
  traj.reserve(steps + 1);
  traj.push_back(init);
  Vec gamma = init.gamma, b = init.b;
  Vec k1g, k1b, k2g, k2b, k3g, k3b, k4g, k4b, tg, tb;
  for (int n = 0; n < steps; ++n) {
    rhs(gamma, b, k1g, k1b);
    tg = gamma;
    tb = b;
    for (std::size_t i = 0; i < tg.size(); ++i) tg[i] += 0.5 * rk4_h * k1g[i];
    for (int i = 0; i < d; ++i) tb[i] += 0.5 * rk4_h * k1b[i];
    rhs(tg, tb, k2g, k2b);
    tg = gamma;
    tb = b;
    for (std::size_t i = 0; i < tg.size(); ++i) tg[i] += 0.5 * rk4_h * k2g[i];
    for (int i = 0; i < d; ++i) tb[i] += 0.5 * rk4_h * k2b[i];
    rhs(tg, tb, k3g, k3b);
    tg = gamma;
    tb = b;
    for (std::size_t i = 0; i < tg.size(); ++i) tg[i] += rk4_h * k3g[i];
    for (int i = 0; i < d; ++i) tb[i] += rk4_h * k3b[i];
    rhs(tg, tb, k4g, k4b);
    for (std::size_t i = 0; i < gamma.size(); ++i)
      gamma[i] += rk4_h / 6.0 * (k1g[i] + 2.0 * k2g[i] + 2.0 * k3g[i] + k4g[i]);
    for (int i = 0; i < d; ++i)
      b[i] += rk4_h / 6.0 * (k1b[i] + 2.0 * k2b[i] + 2.0 * k3b[i] + k4b[i]);
    AffineState st;
    st.dim = d;
    st.gamma = gamma;
    st.b = b;
    traj.push_back(st);
  }
  return traj;
}

GaussianState affine_pushforward(const AffineState& s) {
  GaussianState g;
  g.mean = s.b;
  SmallSymMatrix cov(s.dim);
  for (int i = 0; i < s.dim; ++i)
    for (int j = i; j < s.dim; ++j) {
      double acc = 0.0;
      for (int k = 0; k < s.dim; ++k)
        acc += s.gamma[static_cast<std::size_t>(i) * s.dim + k] *
               s.gamma[static_cast<std::size_t>(j) * s.dim + k];
      cov.at(i, j) = acc;
    }
  cov.symmetrize();
  g.cov = cov;
  return g;
}

numkit::SampleBatch euler_maruyama_drift(
    const std::function<void(std::span<const double>, std::span<double>)>& drift, double beta,
    const numkit::SampleBatch& x0, double dt, int steps, numkit::Rng& rng) {
  if (!(dt > 0.0) || steps < 0) throw Error("euler_maruyama: invalid dt or steps");
  if (beta < 0.0) throw Error("euler_maruyama: beta must be non-negative");
  numkit::SampleBatch x = x0;
  const int d = x.dim, K = x.count;
  const double noise = std::sqrt(2.0 * beta * dt);
  Vec g(d), xi(static_cast<std::size_t>(K) * d);
  for (int n = 0; n < steps; ++n) {
    if (noise > 0.0) rng.fill_gaussian(xi);
    for (int k = 0; k < K; ++k) {
      double* row = x.row(k);
      drift(std::span<const double>(row, static_cast<std::size_t>(d)),
            std::span<double>(g.data(), static_cast<std::size_t>(d)));
      const double* z = xi.data() + static_cast<std::size_t>(k) * d;
      for (int i = 0; i < d; ++i) {
        row[i] += g[i] * dt + (noise > 0.0 ? noise * z[i] : 0.0);
        if (!std::isfinite(row[i])) throw Error("SDE trajectory diverged");
      }
    }
  }
  return x;
}

numkit::SampleBatch euler_maruyama(const potential::PotentialSpec& pot, double beta,
                                   const numkit::SampleBatch& x0, double dt, int steps,
                                   numkit::Rng& rng) {
  if (x0.dim != pot.dim) throw Error("euler_maruyama: dimension mismatch");
  Vec tmp(pot.dim);
  auto drift = [&](std::span<const double> x, std::span<double> g) {
    potential::potential_grad(pot, x, g);
    for (double& v : g) v = -v;
  };
  return euler_maruyama_drift(drift, beta, x0, dt, steps, rng);
}

double gaussian_w2(const GaussianState& a, const GaussianState& b) {
  const int d = a.cov.size();
  if (b.cov.size() != d || a.mean.size() != b.mean.size())
    throw Error("gaussian_w2: dimension mismatch");
  double dm = 0.0;
  for (int i = 0; i < d; ++i) {
    double v = a.mean[i] - b.mean[i];
    dm += v * v;
  }
  SmallSymMatrix rb = numkit::mat_sqrt_spd(b.cov);
  // M = rb * Sa * rb
  SmallSymMatrix m(d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) acc += rb.at(i, k) * a.cov.at(k, l) * rb.at(l, j);
      m.at(i, j) = acc;
    }
  m.symmetrize();
  SmallSymMatrix cross = numkit::mat_sqrt_spd(m);
  double tr = 0.0;
  for (int i = 0; i < d; ++i) tr += a.cov.at(i, i) + b.cov.at(i, i) - 2.0 * cross.at(i, i);
  return std::sqrt(std::max(0.0, dm + tr));
}

double gaussian_kl(const GaussianState& a, const GaussianState& b) {
  const int d = a.cov.size();
  if (b.cov.size() != d) throw Error("gaussian_kl: dimension mismatch");
  numkit::Cholesky chb = numkit::cholesky(b.cov);
  numkit::Cholesky cha = numkit::cholesky(a.cov);
  // tr(Sb^{-1} Sa)
  double tr = 0.0;
  Vec col(d), sol;
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) col[i] = a.cov.at(i, j);
    sol = chb.solve(col);
    tr += sol[j];
  }
  Vec dm(d);
  for (int i = 0; i < d; ++i) dm[i] = b.mean[i] - a.mean[i];
  Vec sdm = chb.solve(dm);
  double quad = 0.0;
  for (int i = 0; i < d; ++i) quad += dm[i] * sdm[i];
  return 0.5 * (tr + quad - d + chb.log_det() - cha.log_det());
}

GaussianState gibbs_gaussian(const potential::PotentialSpec& quadratic, double beta) {
  require_quadratic(quadratic);
  GaussianState g;
  g.mean = quadratic.mu;
  g.cov = quadratic.sigma.scaled(beta);
  return g;
}

}  // namespace wassflow::reference
