#include <cmath>

#include <doctest.h>

#include "wassflow/oned.hpp"

using namespace wassflow;
using namespace wassflow::oned;

namespace {

const Quadrature& quad100() {
  static Quadrature q = Quadrature::gauss_hermite(100);
  return q;
}

flow::FlowParams random_planar1d(numkit::Rng& rng, int layers, double spread = 0.5) {
  flow::FlowParams p = flow::FlowParams::identity_trainable(1, layers, rng);
  Vec flat = p.to_flat();
  Vec noise(flat.size());
  rng.fill_gaussian(noise);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += spread * noise[i];
  return flow::FlowParams::from_flat(1, layers, flat);
}

}  // namespace

TEST_SUITE("oned") {

TEST_CASE("gauss-hermite rule integrates gaussian moments") {
  const Quadrature& q = quad100();
  double w = 0.0, x2 = 0.0, x4 = 0.0;
  for (std::size_t i = 0; i < q.nodes.size(); ++i) {
    w += q.weights[i];
    x2 += q.weights[i] * q.nodes[i] * q.nodes[i];
    x4 += q.weights[i] * std::pow(q.nodes[i], 4);
  }
  CHECK(std::fabs(w - 1.0) <= 1e-12);
  CHECK(std::fabs(x2 - 1.0) <= 1e-10);
  CHECK(std::fabs(x4 - 3.0) <= 1e-9);
}

TEST_CASE("affine metric is the identity") {
  for (auto [t1, t2] : std::vector<std::pair<double, double>>{{1, 0}, {2, 1}, {0.3, -4}}) {
    numkit::SmallSymMatrix g = metric_1d(Flow1D::affine(t1, t2), quad100());
    CHECK(std::fabs(g.at(0, 0) - 1.0) <= 1e-12);
    CHECK(std::fabs(g.at(0, 1)) <= 1e-12);
    CHECK(std::fabs(g.at(1, 1) - 1.0) <= 1e-12);
  }
}

TEST_CASE("planar metric matches a monte-carlo estimate") {
  numkit::Rng rng(51);
  flow::FlowParams fp = random_planar1d(rng, 2);
  Flow1D f = Flow1D::planar(fp);
  numkit::SmallSymMatrix g = metric_1d(f, quad100());

  const int n = 1000000;
  const int m = f.param_count();
  numkit::SmallSymMatrix mc(m);
  std::vector<Vec> sq(m, Vec(m, 0.0));  // for stderr
  numkit::Rng srng(52);
  for (int k = 0; k < n; ++k) {
    double x = srng.next_gaussian();
    Flow1D::Eval ev = f.eval(x);
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) {
        double prod = ev.d_theta[i] * ev.d_theta[j];
        mc.at(i, j) += prod;
        sq[i][j] += prod * prod;
      }
  }
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) {
      double mean = mc.at(i, j) / n;
      double var = sq[i][j] / n - mean * mean;
      double se = std::sqrt(std::max(var, 0.0) / n);
      CHECK(std::fabs(g.at(i, j) - mean) <= 3.0 * se + 1e-9);
    }
}

TEST_CASE("metric is positive semidefinite on random flows") {
  numkit::Rng rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    Flow1D f = Flow1D::planar(random_planar1d(rng, 3));
    numkit::SmallSymMatrix g = metric_1d(f, quad100());
    numkit::EigenSym e = numkit::eigh(g);
    CHECK(e.values.front() >= -1e-10);
  }
}

TEST_CASE("gram property: quadratic forms are nonnegative") {
  numkit::Rng rng(54);
  for (int trial = 0; trial < 100; ++trial) {
    Flow1D f = Flow1D::planar(random_planar1d(rng, 2));
    numkit::SmallSymMatrix g = metric_1d(f, quad100());
    Vec x(f.param_count());
    rng.fill_gaussian(x);
    Vec gx = g.apply(x);
    double q = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) q += x[i] * gx[i];
    CHECK(q >= -1e-10);
  }
}

TEST_CASE("affine entropy gradient has the closed form") {
  auto pot = potential::PotentialSpec::quadratic({0.0}, numkit::SmallSymMatrix::identity(1), 1.0);
  Vec g0 = grad_H_1d(Flow1D::affine(1.0, 0.0), pot, quad100());
  CHECK(std::fabs(g0[0]) <= 1e-12);
  CHECK(std::fabs(g0[1]) <= 1e-12);

  Vec g = grad_H_1d(Flow1D::affine(2.0, 1.0), pot, quad100());
  CHECK(g[0] == doctest::Approx(1.5).epsilon(1e-10));
  CHECK(g[1] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("entropy gradient matches finite differences") {
  auto pot = potential::PotentialSpec::styblinski_tang(1, 1.0);
  numkit::Rng rng(55);
  const double step = 1e-6;

  for (int trial = 0; trial < 5; ++trial) {
    Flow1D f = trial == 0 ? Flow1D::affine(1.7, -0.4) : Flow1D::planar(random_planar1d(rng, 2));
    Vec g = grad_H_1d(f, pot, quad100());
    Vec p = f.params();
    for (std::size_t i = 0; i < p.size(); ++i) {
      Vec pp = p, pm = p;
      pp[i] += step;
      pm[i] -= step;
      double fd = (entropy_1d(f.with_params(pp), pot, quad100()) -
                   entropy_1d(f.with_params(pm), pot, quad100())) /
                  (2 * step);
      CHECK(std::fabs(fd - g[i]) / (1.0 + std::fabs(g[i])) <= 1e-6);
    }
  }
}

TEST_CASE("forward euler reproduces the closed-form affine trajectory") {
  auto pot = potential::PotentialSpec::quadratic({0.0}, numkit::SmallSymMatrix::identity(1), 1.0);
  const double h = 1e-4;
  const int n = 10000;
  auto traj = forward_euler_solve_1d(Flow1D::affine(2.0, 1.0), pot, h, n, quad100());
  Vec p = traj.back().params();
  CHECK(std::fabs(p[0] * p[0] - (1.0 + 3.0 * std::exp(-2.0))) <= 1e-3);
  CHECK(std::fabs(p[1] - std::exp(-1.0)) <= 1e-3);
}

TEST_CASE("equilibrium stays put") {
  auto pot = potential::PotentialSpec::quadratic({0.0}, numkit::SmallSymMatrix::identity(1), 1.0);
  auto traj = forward_euler_solve_1d(Flow1D::affine(1.0, 0.0), pot, 1e-3, 100, quad100());
  Vec p = traj.back().params();
  CHECK(std::fabs(p[0] - 1.0) <= 1e-12);
  CHECK(std::fabs(p[1]) <= 1e-12);
}

TEST_CASE("halving the step roughly halves the error") {
  auto pot = potential::PotentialSpec::quadratic({0.0}, numkit::SmallSymMatrix::identity(1), 1.0);
  double t1e = std::sqrt(1.0 + 3.0 * std::exp(-2.0));
  double t2e = std::exp(-1.0);
  auto err = [&](double h) {
    int n = static_cast<int>(std::lround(1.0 / h));
    auto traj = forward_euler_solve_1d(Flow1D::affine(2.0, 1.0), pot, h, n, quad100());
    Vec p = traj.back().params();
    return std::hypot(p[0] - t1e, p[1] - t2e);
  };
  double e1 = err(0.02), e2 = err(0.01);
  double ratio = e1 / e2;
  CHECK(ratio >= 1.6);
  CHECK(ratio <= 2.6);
}

TEST_CASE("entropy descends along the discrete flow") {
  auto pot = potential::PotentialSpec::quadratic({0.0}, numkit::SmallSymMatrix::identity(1), 1.0);
  const double h = 0.01;
  auto traj = forward_euler_solve_1d(Flow1D::affine(2.0, 1.0), pot, h, 100, quad100());
  double prev = entropy_1d(traj[0], pot, quad100());
  for (std::size_t n = 1; n < traj.size(); ++n) {
    double cur = entropy_1d(traj[n], pot, quad100());
    CHECK(cur - prev <= 10.0 * h * h * 2.0);
    prev = cur;
  }
}

TEST_CASE("flat and metric flows coincide for the affine family") {
  // G = I for the affine family, so forward Euler on the metric ODE equals
  // plain gradient descent with the same step
  auto pot = potential::PotentialSpec::quadratic({0.0}, numkit::SmallSymMatrix::identity(1), 1.0);
  const double h = 0.01;
  const int n = 50;
  auto traj = forward_euler_solve_1d(Flow1D::affine(2.0, 1.0), pot, h, n, quad100());
  Vec p{2.0, 1.0};
  for (int k = 0; k < n; ++k) {
    Vec g = grad_H_1d(Flow1D::affine(p[0], p[1]), pot, quad100());
    p[0] -= h * g[0];
    p[1] -= h * g[1];
  }
  Vec pm = traj.back().params();
  CHECK(std::fabs(pm[0] - p[0]) <= 1e-12);
  CHECK(std::fabs(pm[1] - p[1]) <= 1e-12);
}

TEST_CASE("delta1 vanishes for the affine family on quadratic potentials") {
  auto pot = potential::PotentialSpec::quadratic({0.0}, numkit::SmallSymMatrix::identity(1), 1.0);
  Delta1Breakdown d = delta1_residual_1d(Flow1D::affine(2.0, 1.0), pot, quad100());
  CHECK(d.fisher_term == doctest::Approx(3.25).epsilon(1e-10));
  CHECK(d.gradient_term == doctest::Approx(3.25).epsilon(1e-10));
  CHECK(d.residual <= 1e-9);

  numkit::Rng rng(57);
  for (int trial = 0; trial < 20; ++trial) {
    double t1 = 0.5 + 2.5 * rng.next_unit();
    double t2 = 2.0 * rng.next_gaussian();
    double mu = rng.next_gaussian();
    double s2 = 0.5 + rng.next_unit();
    auto potr = potential::PotentialSpec::quadratic({mu}, numkit::SmallSymMatrix::diag({s2}), 1.0);
    Delta1Breakdown dr = delta1_residual_1d(Flow1D::affine(t1, t2), potr, quad100());
    CHECK(dr.residual <= 1e-9);
    CHECK(dr.fisher_term - dr.gradient_term >= -1e-9);
  }
}

TEST_CASE("delta1 regression value for styblinski-tang at the identity") {
  auto pot = potential::PotentialSpec::styblinski_tang(1, 1.0);
  Delta1Breakdown d = delta1_residual_1d(Flow1D::affine(1.0, 0.0), pot, quad100());
  // quadrature oracle: fisher 5.2756, gradient 4.93, residual 0.3456
  CHECK(std::fabs(d.residual - 0.3456) <= 1e-9);
  CHECK(d.residual > 1e-3);
}

TEST_CASE("residual is clamped nonnegative on random flows") {
  numkit::Rng rng(58);
  auto potq = potential::PotentialSpec::quadratic({0.3}, numkit::SmallSymMatrix::diag({0.8}), 1.0);
  auto pots = potential::PotentialSpec::styblinski_tang(1, 1.0);
  // sharper random flows need a finer rule for the two integrals to agree
  Quadrature fine = Quadrature::gauss_hermite(150);
  for (int trial = 0; trial < 40; ++trial) {
    Flow1D f = Flow1D::planar(random_planar1d(rng, 2));
    for (const auto* pot : {&potq, &pots}) {
      Delta1Breakdown d = delta1_residual_1d(f, *pot, fine);
      CHECK(d.residual >= 0.0);
      CHECK(d.fisher_term - d.gradient_term >= -1e-9);
    }
  }
}

TEST_CASE("planar identity metric matches the restricted identity pattern") {
  // w = 0, b = 0, u_raw = 1: the map is the identity; the active directions
  // are w (dT/dw = x) and b (dT/db = 1) while u is inert (dT/du = tanh(0) = 0)
  flow::FlowParams p = flow::FlowParams::identity(1, 1);
  p.layers[0].u_raw = {1.0};
  numkit::SmallSymMatrix g = metric_1d(Flow1D::planar(p), quad100());
  CHECK(std::fabs(g.at(0, 0) - 1.0) <= 1e-12);  // E x^2
  CHECK(std::fabs(g.at(1, 1)) <= 1e-12);
  CHECK(std::fabs(g.at(2, 2) - 1.0) <= 1e-12);  // E 1
  CHECK(std::fabs(g.at(0, 2)) <= 1e-12);        // E x
}

TEST_CASE("invalid affine parameters are rejected") {
  CHECK_THROWS_WITH_AS(Flow1D::affine(-1.0, 0.0), "flow not invertible on support", Error);
}

TEST_CASE("a flow with no active directions degenerates the metric") {
  // strict identity: every parameter derivative vanishes, so G = 0
  auto pot = potential::PotentialSpec::quadratic({0.0}, numkit::SmallSymMatrix::identity(1), 1.0);
  Flow1D f = Flow1D::planar(flow::FlowParams::identity(1, 2));
  CHECK_THROWS_WITH_AS(forward_euler_solve_1d(f, pot, 0.01, 5, quad100()), "metric degenerate",
                       Error);
}

}  // TEST_SUITE
