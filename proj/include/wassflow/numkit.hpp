#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "wassflow/common.hpp"

namespace wassflow::numkit {

// xoshiro256++ seeded through splitmix64. Integer state only, so streams are
// bit-identical across platforms; the Gaussian path is Box-Muller on top of
// the 53-bit uniform draw (documented in README, frozen for regression
// baselines).
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  // Decorrelated stream for the same run seed (snapshot evaluation, psi
  // init). Streams with different ids never share state.
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  double next_unit();      // uniform on (0, 1]
  double next_gaussian();  // single N(0,1) draw; pairs internally, second discarded
  void fill_gaussian(std::span<double> out);

private:
  std::uint64_t s_[4];
};

struct SampleBatch {
  Vec data;  // row-major, count x dim
  int dim = 0;
  int count = 0;

  double* row(int k) { return data.data() + static_cast<std::size_t>(k) * dim; }
  const double* row(int k) const { return data.data() + static_cast<std::size_t>(k) * dim; }
};

SampleBatch sample_std_gaussian(Rng& rng, int dim, int count);

class SmallSymMatrix {
public:
  SmallSymMatrix() = default;
  explicit SmallSymMatrix(int n) : n_(n), a_(static_cast<std::size_t>(n) * n, 0.0) {}
  static SmallSymMatrix identity(int n);
  static SmallSymMatrix diag(const Vec& d);

  int size() const { return n_; }
  double& at(int i, int j) { return a_[static_cast<std::size_t>(i) * n_ + j]; }
  double at(int i, int j) const { return a_[static_cast<std::size_t>(i) * n_ + j]; }
  const Vec& raw() const { return a_; }
  Vec& raw() { return a_; }

  // Mirrors the upper triangle into the lower one.
  void symmetrize();

  SmallSymMatrix operator+(const SmallSymMatrix& o) const;
  SmallSymMatrix operator-(const SmallSymMatrix& o) const;
  SmallSymMatrix scaled(double c) const;
  Vec apply(const Vec& x) const;
  double max_abs_diff(const SmallSymMatrix& o) const;

private:
  int n_ = 0;
  Vec a_;
};

struct EigenSym {
  Vec values;          // ascending
  Vec vectors;         // row-major n x n, column j = eigenvector of values[j]
};

// Cyclic Jacobi; exact enough for the small dense matrices used here.
EigenSym eigh(const SmallSymMatrix& s);

// S = Q f(L) Q^T for a scalar function applied to eigenvalues.
SmallSymMatrix apply_spectral(const SmallSymMatrix& s, double (*f)(double));

// Cholesky factor of S + jitter*I; throws Error if not positive definite.
struct Cholesky {
  int n = 0;
  Vec l;  // row-major lower triangle
  Vec solve(const Vec& b) const;
  double log_det() const;  // of the factored matrix
};
Cholesky cholesky(const SmallSymMatrix& s, double jitter = 0.0);

std::pair<Vec, SmallSymMatrix> empirical_mean_cov(const SampleBatch& batch);

// Unique SPD square root. 2x2 uses the closed form
// (S + sqrt(det) I) / sqrt(tr + 2 sqrt(det)); other sizes go through eigh.
// Eigenvalues in [-1e-10, 0] are clamped to zero, below that it throws.
SmallSymMatrix mat_sqrt_spd(const SmallSymMatrix& s);

// Exact empirical W2 between equal-size 1D clouds (sorted coupling).
double w2_1d_empirical(std::span<const double> a, std::span<const double> b);

}  // namespace wassflow::numkit
