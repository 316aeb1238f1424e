#include "wassflow/numkit.hpp"

#include <algorithm>
#include <cmath>

namespace wassflow::numkit {

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& w : s_) w = splitmix64(sm);
}

Rng Rng::stream(std::uint64_t seed, std::uint64_t stream_id) {
  return Rng(seed ^ (0x9E3779B97F4A7C15ULL * (stream_id + 1)));
}

std::uint64_t Rng::next_u64() {
  std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::next_unit() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::next_gaussian() {
  double u1 = next_unit();
  double u2 = next_unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

void Rng::fill_gaussian(std::span<double> out) {
  std::size_t i = 0;
  while (i + 2 <= out.size()) {
    double u1 = next_unit();
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    out[i++] = r * std::cos(kTwoPi * u2);
    out[i++] = r * std::sin(kTwoPi * u2);
  }
  if (i < out.size()) out[i] = next_gaussian();
}

SampleBatch sample_std_gaussian(Rng& rng, int dim, int count) {
  if (dim < 1 || count < 1) throw Error("sample_std_gaussian: dim and count must be >= 1");
  SampleBatch b;
  b.dim = dim;
  b.count = count;
  b.data.resize(static_cast<std::size_t>(dim) * count);
  rng.fill_gaussian(b.data);
  return b;
}

SmallSymMatrix SmallSymMatrix::identity(int n) {
  SmallSymMatrix s(n);
  for (int i = 0; i < n; ++i) s.at(i, i) = 1.0;
  return s;
}

SmallSymMatrix SmallSymMatrix::diag(const Vec& d) {
  SmallSymMatrix s(static_cast<int>(d.size()));
  for (int i = 0; i < s.size(); ++i) s.at(i, i) = d[i];
  return s;
}

void SmallSymMatrix::symmetrize() {
  for (int i = 0; i < n_; ++i)
    for (int j = i + 1; j < n_; ++j) at(j, i) = at(i, j);
}

SmallSymMatrix SmallSymMatrix::operator+(const SmallSymMatrix& o) const {
  SmallSymMatrix r(n_);
  for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] = a_[i] + o.a_[i];
  return r;
}

SmallSymMatrix SmallSymMatrix::operator-(const SmallSymMatrix& o) const {
  SmallSymMatrix r(n_);
  for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] = a_[i] - o.a_[i];
  return r;
}

SmallSymMatrix SmallSymMatrix::scaled(double c) const {
  SmallSymMatrix r(n_);
  for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] = c * a_[i];
  return r;
}

Vec SmallSymMatrix::apply(const Vec& x) const {
  Vec y(n_, 0.0);
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < n_; ++j) y[i] += at(i, j) * x[j];
  return y;
}

double SmallSymMatrix::max_abs_diff(const SmallSymMatrix& o) const {
  double m = 0.0;
  for (std::size_t i = 0; i < a_.size(); ++i) m = std::max(m, std::fabs(a_[i] - o.a_[i]));
  return m;
}

EigenSym eigh(const SmallSymMatrix& s) {
  const int n = s.size();
  Vec a = s.raw();
  Vec v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  auto V = [&](int i, int j) -> double& { return v[static_cast<std::size_t>(i) * n + j]; };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-300) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = A(p, q);
        if (apq == 0.0) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double sn = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - sn * akq;
          A(k, q) = sn * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - sn * aqk;
          A(q, k) = sn * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - sn * vkq;
          V(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  EigenSym e;
  e.values.resize(n);
  for (int i = 0; i < n; ++i) e.values[i] = A(i, i);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return e.values[i] < e.values[j]; });
  EigenSym out;
  out.values.resize(n);
  out.vectors.resize(static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    out.values[j] = e.values[order[j]];
    for (int i = 0; i < n; ++i)
      out.vectors[static_cast<std::size_t>(i) * n + j] = V(i, order[j]);
  }
  return out;
}

SmallSymMatrix apply_spectral(const SmallSymMatrix& s, double (*f)(double)) {
  const int n = s.size();
  EigenSym e = eigh(s);
  SmallSymMatrix r(n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k)
        acc += f(e.values[k]) * e.vectors[static_cast<std::size_t>(i) * n + k] *
               e.vectors[static_cast<std::size_t>(j) * n + k];
      r.at(i, j) = acc;
    }
  r.symmetrize();
  return r;
}

Cholesky cholesky(const SmallSymMatrix& s, double jitter) {
  const int n = s.size();
  Cholesky ch;
  ch.n = n;
  ch.l.assign(static_cast<std::size_t>(n) * n, 0.0);
  auto L = [&](int i, int j) -> double& { return ch.l[static_cast<std::size_t>(i) * n + j]; };
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double acc = s.at(i, j) + (i == j ? jitter : 0.0);
      for (int k = 0; k < j; ++k) acc -= L(i, k) * L(j, k);
      if (i == j) {
        if (acc <= 0.0) throw Error("cholesky: matrix not positive definite");
        L(i, i) = std::sqrt(acc);
      } else {
        L(i, j) = acc / L(j, j);
      }
    }
  }
  return ch;
}

Vec Cholesky::solve(const Vec& b) const {
  Vec y(n), x(n);
  auto L = [&](int i, int j) { return l[static_cast<std::size_t>(i) * n + j]; };
  for (int i = 0; i < n; ++i) {
    double acc = b[i];
    for (int k = 0; k < i; ++k) acc -= L(i, k) * y[k];
    y[i] = acc / L(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    double acc = y[i];
    for (int k = i + 1; k < n; ++k) acc -= L(k, i) * x[k];
    x[i] = acc / L(i, i);
  }
  return x;
}

double Cholesky::log_det() const {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::log(l[static_cast<std::size_t>(i) * n + i]);
  return 2.0 * acc;
}

std::pair<Vec, SmallSymMatrix> empirical_mean_cov(const SampleBatch& batch) {
  if (batch.count < 2) throw Error("insufficient samples for covariance");
  const int d = batch.dim, m = batch.count;
  Vec mean(d, 0.0);
  for (int k = 0; k < m; ++k) {
    const double* r = batch.row(k);
    for (int i = 0; i < d; ++i) mean[i] += r[i];
  }
  for (int i = 0; i < d; ++i) mean[i] /= m;
  SmallSymMatrix cov(d);
  for (int k = 0; k < m; ++k) {
    const double* r = batch.row(k);
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) cov.at(i, j) += (r[i] - mean[i]) * (r[j] - mean[j]);
  }
  double inv = 1.0 / (m - 1);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) cov.at(i, j) *= inv;
  cov.symmetrize();
  return {mean, cov};
}

SmallSymMatrix mat_sqrt_spd(const SmallSymMatrix& s) {
  const int n = s.size();
  if (n == 1) {
    double v = s.at(0, 0);
    if (v < -1e-10) throw Error("matrix not PSD");
    SmallSymMatrix r(1);
    r.at(0, 0) = std::sqrt(std::max(v, 0.0));
    return r;
  }
  if (n == 2) {
    double det = s.at(0, 0) * s.at(1, 1) - s.at(0, 1) * s.at(1, 0);
    double tr = s.at(0, 0) + s.at(1, 1);
    // eigenvalue check mirrors the general path's tolerance
    double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    double lmin = tr / 2.0 - disc;
    if (lmin < -1e-10) throw Error("matrix not PSD");
    det = std::max(det, 0.0);
    double sd = std::sqrt(det);
    double denom = std::sqrt(std::max(tr + 2.0 * sd, 0.0));
    SmallSymMatrix r(2);
    if (denom == 0.0) return r;
    r.at(0, 0) = (s.at(0, 0) + sd) / denom;
    r.at(0, 1) = s.at(0, 1) / denom;
    r.at(1, 1) = (s.at(1, 1) + sd) / denom;
    r.symmetrize();
    return r;
  }
  EigenSym e = eigh(s);
  for (double& v : e.values) {
    if (v < -1e-10) throw Error("matrix not PSD");
    if (v < 0.0) v = 0.0;
  }
  SmallSymMatrix r(n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k)
        acc += std::sqrt(e.values[k]) * e.vectors[static_cast<std::size_t>(i) * n + k] *
               e.vectors[static_cast<std::size_t>(j) * n + k];
      r.at(i, j) = acc;
    }
  r.symmetrize();
  return r;
}

double w2_1d_empirical(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw Error("sample counts must match");
  Vec sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    double d = sa[i] - sb[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(sa.size()));
}

}  // namespace wassflow::numkit
