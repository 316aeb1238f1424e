#pragma once

#include <cstddef>

// Scalar reference kernels plus AVX2 variants selected at runtime.
//
// The scalar implementations mirror the AVX2 lane structure operation for
// operation (same fma placement, same 4-accumulator reduction tree), so both
// backends produce bit-identical outputs on the same input. The equivalence
// tests assert exact equality, which keeps results independent of the
// dispatch decision.
//
// Selection order: WASSFLOW_SIMD env var (scalar | avx2 | auto), then CPUID.

namespace wassflow::kern {

enum class Backend { scalar, avx2 };

struct Ops {
  const char* name;

  // y[i] = tanh(x[i])
  void (*vtanh)(const double* x, double* y, std::size_t n);

  // 4-lane blocked dot product / sum.
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);

  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);

  // C[K x n] (+)= A[K x p] * B[n x p]^T, optional bias[n] added per row.
  void (*gemm_nt)(const double* A, const double* B, double* C,
                  std::size_t K, std::size_t p, std::size_t n,
                  const double* bias, bool accumulate);

  // C[K x n] (+)= A[K x p] * B[p x n]
  void (*gemm_nn)(const double* A, const double* B, double* C,
                  std::size_t K, std::size_t p, std::size_t n,
                  bool accumulate);

  // C[p x q] (+)= A[K x p]^T * B[K x q]
  void (*gemm_tn)(const double* A, const double* B, double* C,
                  std::size_t K, std::size_t p, std::size_t q,
                  bool accumulate);

  // z[i] = max(a[i], 0)
  void (*relu)(const double* a, double* z, std::size_t n);

  // x[i] = (a[i] > 0) ? x[i] : 0
  void (*relu_mask)(const double* a, double* x, std::size_t n);

  // Fused Adam update with precomputed bias corrections bc1 = 1-b1^t,
  // bc2 = 1-b2^t:
  //   m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2
  //   p -= lr * (m/bc1) / (sqrt(v/bc2) + eps)
  void (*adam_update)(double* p, double* m, double* v, const double* g,
                      std::size_t n, double lr, double b1, double b2,
                      double eps, double bc1, double bc2);
};

const Ops& scalar_ops();
#ifdef WASSFLOW_BUILD_AVX2
const Ops& avx2_ops();
#endif

bool avx2_supported();

// Active backend, resolved once per process.
const Ops& active();

}  // namespace wassflow::kern
