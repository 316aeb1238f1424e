#include "wassflow/simd_kernels.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>

#include "tanh_constants.hpp"
#include "wassflow/common.hpp"

namespace wassflow {

int max_threads() {
  static int cached = [] {
    const char* env = std::getenv("WASSFLOW_THREADS");
    if (!env) return 1;
    int v = std::atoi(env);
    if (v < 1) v = 1;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw > 0 && v > hw) v = hw;
    return v;
  }();
  return cached;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t, int)>& body) {
  int nt = max_threads();
  if (nt <= 1 || n < 64) {
    body(0, n, 0);
    return;
  }
  std::size_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> pool;
  for (int t = 1; t < nt; ++t) {
    std::size_t lo = chunk * t;
    if (lo >= n) break;
    std::size_t hi = std::min(n, lo + chunk);
    pool.emplace_back([&body, lo, hi, t] { body(lo, hi, t); });
  }
  body(0, std::min(n, chunk), 0);
  for (auto& th : pool) th.join();
}

}  // namespace wassflow

namespace wassflow::kern {
namespace {

using namespace detail;

inline double ldexp_fast(double x, long k) {
  const auto bits = static_cast<std::uint64_t>(1023 + k) << 52;
  return x * std::bit_cast<double>(bits);
}

// exp(y) for y in [0, ~40); mirrors the AVX2 op order exactly.
inline double exp_core(double y) {
  double k = std::nearbyint(y * kLog2E);
  double r = std::fma(k, -kC1, y);
  r = std::fma(k, -kC2, r);
  double xx = r * r;
  double p = r * std::fma(std::fma(kExpP0, xx, kExpP1), xx, kExpP2);
  double q = std::fma(std::fma(std::fma(kExpQ0, xx, kExpQ1), xx, kExpQ2), xx, kExpQ3);
  double e = 1.0 + (p + p) / (q - p);
  return ldexp_fast(e, static_cast<long>(k));
}

inline double tanh_core(double x) {
  double ax = std::fabs(x);
  if (ax < kTinyCut) {
    double x2 = x * x;
    return std::fma(x * x2, std::fma(kTaylor5, x2, kTaylor3), x);
  }
  if (ax > kSatCut) return std::copysign(1.0, x);
  double e = exp_core(ax + ax);
  double t = 1.0 - 2.0 / (e + 1.0);
  return std::copysign(t, x);
}

void s_vtanh(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = tanh_core(x[i]);
}

double s_dot(const double* x, const double* y, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t n4 = n & ~std::size_t(3), i = 0;
  for (; i < n4; i += 4)
    for (int j = 0; j < 4; ++j) acc[j] = std::fma(x[i + j], y[i + j], acc[j]);
  double s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

double s_sum(const double* x, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t n4 = n & ~std::size_t(3), i = 0;
  for (; i < n4; i += 4)
    for (int j = 0; j < 4; ++j) acc[j] += x[i + j];
  double s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
  for (; i < n; ++i) s += x[i];
  return s;
}

void s_axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void s_gemm_nt(const double* A, const double* B, double* C, std::size_t K,
               std::size_t p, std::size_t n, const double* bias, bool accumulate) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * p;
    for (std::size_t j = 0; j < n; ++j) {
      double d = s_dot(a, B + j * p, p);
      if (bias) d += bias[j];
      if (accumulate)
        C[k * n + j] += d;
      else
        C[k * n + j] = d;
    }
  }
}

void s_gemm_nn(const double* A, const double* B, double* C, std::size_t K,
               std::size_t p, std::size_t n, bool accumulate) {
  for (std::size_t k = 0; k < K; ++k) {
    double* c = C + k * n;
    if (!accumulate) std::memset(c, 0, n * sizeof(double));
    const double* a = A + k * p;
    for (std::size_t q = 0; q < p; ++q) {
      double aq = a[q];
      const double* b = B + q * n;
      for (std::size_t j = 0; j < n; ++j) c[j] = std::fma(aq, b[j], c[j]);
    }
  }
}

void s_gemm_tn(const double* A, const double* B, double* C, std::size_t K,
               std::size_t p, std::size_t q, bool accumulate) {
  if (!accumulate) std::memset(C, 0, p * q * sizeof(double));
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * p;
    const double* b = B + k * q;
    for (std::size_t i = 0; i < p; ++i) {
      double ai = a[i];
      double* c = C + i * q;
      for (std::size_t j = 0; j < q; ++j) c[j] = std::fma(ai, b[j], c[j]);
    }
  }
}

void s_relu(const double* a, double* z, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) z[i] = (a[i] > 0.0) ? a[i] : 0.0;
}

void s_relu_mask(const double* a, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(a[i] > 0.0)) x[i] = 0.0;
}

void s_adam(double* p, double* m, double* v, const double* g, std::size_t n,
            double lr, double b1, double b2, double eps, double bc1, double bc2) {
  double omb1 = 1.0 - b1, omb2 = 1.0 - b2;
  for (std::size_t i = 0; i < n; ++i) {
    double gi = g[i];
    m[i] = std::fma(b1, m[i], omb1 * gi);
    v[i] = std::fma(b2, v[i], omb2 * (gi * gi));
    double mh = m[i] / bc1;
    double vh = v[i] / bc2;
    p[i] -= (lr * mh) / (std::sqrt(vh) + eps);
  }
}

const Ops kScalar = {
    "scalar", s_vtanh, s_dot, s_sum, s_axpy, s_gemm_nt, s_gemm_nn, s_gemm_tn,
    s_relu, s_relu_mask, s_adam,
};

}  // namespace

const Ops& scalar_ops() { return kScalar; }

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Ops& active() {
  static const Ops* chosen = []() -> const Ops* {
    const char* env = std::getenv("WASSFLOW_SIMD");
    std::string mode = env ? env : "auto";
    if (mode == "scalar") return &kScalar;
#ifdef WASSFLOW_BUILD_AVX2
    if (mode == "avx2") {
      if (!avx2_supported()) throw Error("WASSFLOW_SIMD=avx2 but CPU lacks AVX2/FMA");
      return &avx2_ops();
    }
    if (avx2_supported()) return &avx2_ops();
#else
    if (mode == "avx2") throw Error("binary built without AVX2 support");
#endif
    return &kScalar;
  }();
  return *chosen;
}

}  // namespace wassflow::kern
