#include <immintrin.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "tanh_constants.hpp"
#include "wassflow/simd_kernels.hpp"

// AVX2/FMA kernel variants. Each kernel performs the same operations in the
// same order as its scalar reference (see simd_kernels.cpp), so outputs are
// bit-identical; the equivalence tests enforce that.

namespace wassflow::kern {
namespace {

using namespace detail;

inline double ldexp_fast(double x, long k) {
  const auto bits = static_cast<std::uint64_t>(1023 + k) << 52;
  return x * std::bit_cast<double>(bits);
}

inline double s_exp_core(double y) {
  double k = std::nearbyint(y * kLog2E);
  double r = std::fma(k, -kC1, y);
  r = std::fma(k, -kC2, r);
  double xx = r * r;
  double p = r * std::fma(std::fma(kExpP0, xx, kExpP1), xx, kExpP2);
  double q = std::fma(std::fma(std::fma(kExpQ0, xx, kExpQ1), xx, kExpQ2), xx, kExpQ3);
  double e = 1.0 + (p + p) / (q - p);
  return ldexp_fast(e, static_cast<long>(k));
}

inline double s_tanh_core(double x) {
  double ax = std::fabs(x);
  if (ax < kTinyCut) {
    double x2 = x * x;
    return std::fma(x * x2, std::fma(kTaylor5, x2, kTaylor3), x);
  }
  if (ax > kSatCut) return std::copysign(1.0, x);
  double e = s_exp_core(ax + ax);
  double t = 1.0 - 2.0 / (e + 1.0);
  return std::copysign(t, x);
}

inline __m256d v_exp_core(__m256d y) {
  const __m256d log2e = _mm256_set1_pd(kLog2E);
  __m256d k = _mm256_round_pd(_mm256_mul_pd(y, log2e),
                              _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fmadd_pd(k, _mm256_set1_pd(-kC1), y);
  r = _mm256_fmadd_pd(k, _mm256_set1_pd(-kC2), r);
  __m256d xx = _mm256_mul_pd(r, r);
  __m256d p = _mm256_fmadd_pd(_mm256_set1_pd(kExpP0), xx, _mm256_set1_pd(kExpP1));
  p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(kExpP2));
  p = _mm256_mul_pd(r, p);
  __m256d q = _mm256_fmadd_pd(_mm256_set1_pd(kExpQ0), xx, _mm256_set1_pd(kExpQ1));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(kExpQ2));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(kExpQ3));
  __m256d e = _mm256_add_pd(_mm256_set1_pd(1.0),
                            _mm256_div_pd(_mm256_add_pd(p, p), _mm256_sub_pd(q, p)));
  // 2^k via exponent bits; k stays well inside [0, 60] for tanh arguments.
  __m128i ki = _mm256_cvtpd_epi32(k);
  __m256i ke = _mm256_add_epi64(_mm256_cvtepi32_epi64(ki), _mm256_set1_epi64x(1023));
  __m256d scale = _mm256_castsi256_pd(_mm256_slli_epi64(ke, 52));
  return _mm256_mul_pd(e, scale);
}

inline __m256d v_tanh(__m256d x) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  __m256d sign = _mm256_and_pd(x, sign_mask);
  __m256d ax = _mm256_andnot_pd(sign_mask, x);

  // saturated and tiny lanes
  __m256d big = _mm256_cmp_pd(ax, _mm256_set1_pd(kSatCut), _CMP_GT_OQ);
  __m256d tiny = _mm256_cmp_pd(ax, _mm256_set1_pd(kTinyCut), _CMP_LT_OQ);

  __m256d x2 = _mm256_mul_pd(x, x);
  __m256d poly = _mm256_fmadd_pd(_mm256_set1_pd(kTaylor5), x2, _mm256_set1_pd(kTaylor3));
  __m256d tiny_val = _mm256_fmadd_pd(_mm256_mul_pd(x, x2), poly, x);

  // clamp so exp_core stays in range on lanes that will be blended away
  __m256d axc = _mm256_min_pd(ax, _mm256_set1_pd(kSatCut));
  __m256d e = v_exp_core(_mm256_add_pd(axc, axc));
  __m256d t = _mm256_sub_pd(_mm256_set1_pd(1.0),
                            _mm256_div_pd(_mm256_set1_pd(2.0),
                                          _mm256_add_pd(e, _mm256_set1_pd(1.0))));
  __m256d main_val = _mm256_or_pd(t, sign);
  __m256d one_val = _mm256_or_pd(_mm256_set1_pd(1.0), sign);

  __m256d out = _mm256_blendv_pd(main_val, one_val, big);
  out = _mm256_blendv_pd(out, tiny_val, tiny);
  return out;
}

void a_vtanh(const double* x, double* y, std::size_t n) {
  std::size_t n4 = n & ~std::size_t(3), i = 0;
  for (; i < n4; i += 4) _mm256_storeu_pd(y + i, v_tanh(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = s_tanh_core(x[i]);
}

inline double reduce4(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  __m128d s2 = _mm_add_pd(lo, hi);                     // [a0+a2, a1+a3]
  return _mm_cvtsd_f64(s2) + _mm_cvtsd_f64(_mm_unpackhi_pd(s2, s2));
}

double a_dot(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t n4 = n & ~std::size_t(3), i = 0;
  for (; i < n4; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  double s = reduce4(acc);
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

double a_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t n4 = n & ~std::size_t(3), i = 0;
  for (; i < n4; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = reduce4(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

void a_axpy(double a, const double* x, double* y, std::size_t n) {
  __m256d va = _mm256_set1_pd(a);
  std::size_t n4 = n & ~std::size_t(3), i = 0;
  for (; i < n4; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void a_gemm_nt(const double* A, const double* B, double* C, std::size_t K,
               std::size_t p, std::size_t n, const double* bias, bool accumulate) {
  std::size_t p4 = p & ~std::size_t(3);
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * p;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
      __m256d acc2 = _mm256_setzero_pd(), acc3 = _mm256_setzero_pd();
      const double* b0 = B + (j + 0) * p;
      const double* b1 = B + (j + 1) * p;
      const double* b2 = B + (j + 2) * p;
      const double* b3 = B + (j + 3) * p;
      std::size_t q = 0;
      for (; q < p4; q += 4) {
        __m256d av = _mm256_loadu_pd(a + q);
        acc0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + q), acc0);
        acc1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + q), acc1);
        acc2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + q), acc2);
        acc3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + q), acc3);
      }
      double d[4] = {reduce4(acc0), reduce4(acc1), reduce4(acc2), reduce4(acc3)};
      const double* brow[4] = {b0, b1, b2, b3};
      for (int jj = 0; jj < 4; ++jj) {
        for (std::size_t qq = p4; qq < p; ++qq) d[jj] = std::fma(a[qq], brow[jj][qq], d[jj]);
        if (bias) d[jj] += bias[j + jj];
        if (accumulate)
          C[k * n + j + jj] += d[jj];
        else
          C[k * n + j + jj] = d[jj];
      }
    }
    for (; j < n; ++j) {
      const double* b = B + j * p;
      __m256d acc = _mm256_setzero_pd();
      std::size_t q = 0;
      for (; q < p4; q += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + q), _mm256_loadu_pd(b + q), acc);
      double d = reduce4(acc);
      for (; q < p; ++q) d = std::fma(a[q], b[q], d);
      if (bias) d += bias[j];
      if (accumulate)
        C[k * n + j] += d;
      else
        C[k * n + j] = d;
    }
  }
}

void a_gemm_nn(const double* A, const double* B, double* C, std::size_t K,
               std::size_t p, std::size_t n, bool accumulate) {
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t k = 0; k < K; ++k) {
    double* c = C + k * n;
    if (!accumulate) std::memset(c, 0, n * sizeof(double));
    const double* a = A + k * p;
    for (std::size_t q = 0; q < p; ++q) {
      __m256d aq = _mm256_set1_pd(a[q]);
      const double* b = B + q * n;
      std::size_t j = 0;
      for (; j < n4; j += 4)
        _mm256_storeu_pd(c + j, _mm256_fmadd_pd(aq, _mm256_loadu_pd(b + j), _mm256_loadu_pd(c + j)));
      for (; j < n; ++j) c[j] = std::fma(a[q], b[j], c[j]);
    }
  }
}

void a_gemm_tn(const double* A, const double* B, double* C, std::size_t K,
               std::size_t p, std::size_t q, bool accumulate) {
  if (!accumulate) std::memset(C, 0, p * q * sizeof(double));
  std::size_t q4 = q & ~std::size_t(3);
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * p;
    const double* b = B + k * q;
    for (std::size_t i = 0; i < p; ++i) {
      __m256d ai = _mm256_set1_pd(a[i]);
      double* c = C + i * q;
      std::size_t j = 0;
      for (; j < q4; j += 4)
        _mm256_storeu_pd(c + j, _mm256_fmadd_pd(ai, _mm256_loadu_pd(b + j), _mm256_loadu_pd(c + j)));
      for (; j < q; ++j) c[j] = std::fma(a[i], b[j], c[j]);
    }
  }
}

void a_relu(const double* a, double* z, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t n4 = n & ~std::size_t(3), i = 0;
  for (; i < n4; i += 4) _mm256_storeu_pd(z + i, _mm256_max_pd(_mm256_loadu_pd(a + i), zero));
  for (; i < n; ++i) z[i] = (a[i] > 0.0) ? a[i] : 0.0;
}

void a_relu_mask(const double* a, double* x, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t n4 = n & ~std::size_t(3), i = 0;
  for (; i < n4; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(a + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(x + i, _mm256_and_pd(mask, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i)
    if (!(a[i] > 0.0)) x[i] = 0.0;
}

void a_adam(double* p, double* m, double* v, const double* g, std::size_t n,
            double lr, double b1, double b2, double eps, double bc1, double bc2) {
  double omb1 = 1.0 - b1, omb2 = 1.0 - b2;
  __m256d vb1 = _mm256_set1_pd(b1), vb2 = _mm256_set1_pd(b2);
  __m256d vomb1 = _mm256_set1_pd(omb1), vomb2 = _mm256_set1_pd(omb2);
  __m256d vlr = _mm256_set1_pd(lr), veps = _mm256_set1_pd(eps);
  __m256d vbc1 = _mm256_set1_pd(bc1), vbc2 = _mm256_set1_pd(bc2);
  std::size_t n4 = n & ~std::size_t(3), i = 0;
  for (; i < n4; i += 4) {
    __m256d gi = _mm256_loadu_pd(g + i);
    __m256d mi = _mm256_fmadd_pd(vb1, _mm256_loadu_pd(m + i), _mm256_mul_pd(vomb1, gi));
    __m256d vi = _mm256_fmadd_pd(vb2, _mm256_loadu_pd(v + i),
                                 _mm256_mul_pd(vomb2, _mm256_mul_pd(gi, gi)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    __m256d mh = _mm256_div_pd(mi, vbc1);
    __m256d vh = _mm256_div_pd(vi, vbc2);
    __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, mh),
                                 _mm256_add_pd(_mm256_sqrt_pd(vh), veps));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  for (; i < n; ++i) {
    double gi = g[i];
    m[i] = std::fma(b1, m[i], omb1 * gi);
    v[i] = std::fma(b2, v[i], omb2 * (gi * gi));
    double mh = m[i] / bc1;
    double vh = v[i] / bc2;
    p[i] -= (lr * mh) / (std::sqrt(vh) + eps);
  }
}

const Ops kAvx2 = {
    "avx2", a_vtanh, a_dot, a_sum, a_axpy, a_gemm_nt, a_gemm_nn, a_gemm_tn,
    a_relu, a_relu_mask, a_adam,
};

}  // namespace

const Ops& avx2_ops() { return kAvx2; }

}  // namespace wassflow::kern
