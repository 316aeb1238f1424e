#include <cmath>
#include <vector>

#include <doctest.h>

#include "wassflow/numkit.hpp"
#include "wassflow/simd_kernels.hpp"

using namespace wassflow;

namespace {

Vec random_vec(numkit::Rng& rng, std::size_t n, double scale = 1.0) {
  Vec v(n);
  rng.fill_gaussian(v);
  for (double& x : v) x *= scale;
  return v;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("vtanh matches libm closely") {
  const auto& ops = kern::active();
  Vec xs;
  for (double x = -25.0; x <= 25.0; x += 0.0137) xs.push_back(x);
  xs.push_back(0.0);
  xs.push_back(1e-300);
  xs.push_back(-1e-300);
  xs.push_back(5e-5);
  xs.push_back(-5e-5);
  xs.push_back(19.0625);
  xs.push_back(700.0);
  Vec out(xs.size());
  ops.vtanh(xs.data(), out.data(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double ref = std::tanh(xs[i]);
    CHECK(std::fabs(out[i] - ref) <= 1e-14);
  }
}

TEST_CASE("scalar and avx2 backends agree bit for bit") {
  if (!kern::avx2_supported()) return;
#ifndef WASSFLOW_BUILD_AVX2
  return;
#else
  const auto& sc = kern::scalar_ops();
  const auto& av = kern::avx2_ops();
  numkit::Rng rng(99);

  for (std::size_t n : {0ul, 1ul, 3ul, 4ul, 7ul, 16ul, 63ul, 257ul}) {
    Vec x = random_vec(rng, n, 3.0);
    Vec y = random_vec(rng, n);
    Vec o1(n), o2(n);
    sc.vtanh(x.data(), o1.data(), n);
    av.vtanh(x.data(), o2.data(), n);
    CHECK(o1 == o2);

    CHECK(sc.dot(x.data(), y.data(), n) == av.dot(x.data(), y.data(), n));
    CHECK(sc.sum(x.data(), n) == av.sum(x.data(), n));

    Vec a1 = y, a2 = y;
    sc.axpy(0.37, x.data(), a1.data(), n);
    av.axpy(0.37, x.data(), a2.data(), n);
    CHECK(a1 == a2);

    Vec r1 = x, r2 = x;
    sc.relu(x.data(), r1.data(), n);
    av.relu(x.data(), r2.data(), n);
    CHECK(r1 == r2);
    Vec m1 = y, m2 = y;
    sc.relu_mask(x.data(), m1.data(), n);
    av.relu_mask(x.data(), m2.data(), n);
    CHECK(m1 == m2);
  }

  // gemm variants on shapes covering remainders
  for (auto [K, p, n] : std::vector<std::array<std::size_t, 3>>{
           {5, 7, 9}, {8, 20, 20}, {3, 1, 4}, {16, 13, 2}, {1, 2, 1}}) {
    Vec A = random_vec(rng, K * p);
    Vec B1 = random_vec(rng, n * p);
    Vec B2 = random_vec(rng, p * n);
    Vec bias = random_vec(rng, n);
    Vec C1(K * n, 0.5), C2(K * n, 0.5);
    sc.gemm_nt(A.data(), B1.data(), C1.data(), K, p, n, bias.data(), true);
    av.gemm_nt(A.data(), B1.data(), C2.data(), K, p, n, bias.data(), true);
    CHECK(C1 == C2);
    sc.gemm_nn(A.data(), B2.data(), C1.data(), K, p, n, false);
    av.gemm_nn(A.data(), B2.data(), C2.data(), K, p, n, false);
    CHECK(C1 == C2);
    Vec D1(p * n, 0.0), D2(p * n, 0.0);
    Vec B3 = random_vec(rng, K * n);
    sc.gemm_tn(A.data(), B3.data(), D1.data(), K, p, n, true);
    av.gemm_tn(A.data(), B3.data(), D2.data(), K, p, n, true);
    CHECK(D1 == D2);
  }

  // adam fused update
  for (std::size_t n : {1ul, 5ul, 64ul, 130ul}) {
    Vec p1 = random_vec(rng, n), p2 = p1;
    Vec m1(n, 0.1), m2 = m1, v1(n, 0.2), v2 = v1;
    Vec g = random_vec(rng, n);
    sc.adam_update(p1.data(), m1.data(), v1.data(), g.data(), n, 0.01, 0.9, 0.999, 1e-8, 0.1, 0.001);
    av.adam_update(p2.data(), m2.data(), v2.data(), g.data(), n, 0.01, 0.9, 0.999, 1e-8, 0.1, 0.001);
    CHECK(p1 == p2);
    CHECK(m1 == m2);
    CHECK(v1 == v2);
  }
#endif
}

TEST_CASE("gemm kernels match naive loops") {
  const auto& ops = kern::active();
  numkit::Rng rng(7);
  const std::size_t K = 6, p = 5, n = 4;
  Vec A = random_vec(rng, K * p);
  Vec B = random_vec(rng, n * p);
  Vec bias = random_vec(rng, n);
  Vec C(K * n, 0.0);
  ops.gemm_nt(A.data(), B.data(), C.data(), K, p, n, bias.data(), false);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < n; ++j) {
      double ref = bias[j];
      for (std::size_t q = 0; q < p; ++q) ref += A[k * p + q] * B[j * p + q];
      CHECK(C[k * n + j] == doctest::Approx(ref).epsilon(1e-13));
    }

  Vec B2 = random_vec(rng, p * n);
  ops.gemm_nn(A.data(), B2.data(), C.data(), K, p, n, false);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < n; ++j) {
      double ref = 0.0;
      for (std::size_t q = 0; q < p; ++q) ref += A[k * p + q] * B2[q * n + j];
      CHECK(C[k * n + j] == doctest::Approx(ref).epsilon(1e-13));
    }

  Vec B3 = random_vec(rng, K * n);
  Vec D(p * n, 0.0);
  ops.gemm_tn(A.data(), B3.data(), D.data(), K, p, n, false);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < K; ++k) ref += A[k * p + i] * B3[k * n + j];
      CHECK(D[i * n + j] == doctest::Approx(ref).epsilon(1e-13));
    }
}

TEST_CASE("reductions match naive accumulation") {
  const auto& ops = kern::active();
  numkit::Rng rng(11);
  Vec x = random_vec(rng, 101), y = random_vec(rng, 101);
  double ref = 0.0, refs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ref += x[i] * y[i];
    refs += x[i];
  }
  CHECK(ops.dot(x.data(), y.data(), x.size()) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(ops.sum(x.data(), x.size()) == doctest::Approx(refs).epsilon(1e-12));
}

}  // TEST_SUITE
