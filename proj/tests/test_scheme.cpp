#include <cmath>

#include <doctest.h>

#include "wassflow/scheme.hpp"

using namespace wassflow;
using namespace wassflow::scheme;

namespace {

SolverConfig tiny_config(int dim) {
  SolverConfig cfg;
  cfg.dim = dim;
  cfg.h = 0.01;
  cfg.steps = 2;
  cfg.m_out = 2;
  cfg.m_in = 3;
  cfg.k_out = 64;
  cfg.k_in = 64;
  cfg.eval_samples = 128;
  cfg.flow_length = 3;
  cfg.psi_depth = 3;
  cfg.psi_hidden = 8;
  cfg.seed = 42;
  return cfg;
}

potential::PotentialSpec quad(int d) {
  return potential::PotentialSpec::quadratic(Vec(d, 1.0), numkit::SmallSymMatrix::identity(d),
                                             1.0);
}

}  // namespace

TEST_SUITE("scheme") {

TEST_CASE("config validation and defaults") {
  SolverConfig cfg = tiny_config(2);
  cfg.validate();
  CHECK(SolverConfig::default_batch(2) == 1000);
  CHECK(SolverConfig::default_batch(10) == 3000);
  CHECK(SolverConfig::suggested_m_out(0.005, 0.005) == 20);

  cfg.h = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config(2);
  cfg.snapshot_stride = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);

  SolverConfig w = tiny_config(2);
  CHECK(w.psi_widths() == std::vector<int>{2, 8, 8, 1});
}

TEST_CASE("outer gradient vanishes when h=0 and psi=0") {
  numkit::Rng rng(1);
  flow::FlowParams theta = flow::FlowParams::identity_trainable(2, 3, rng);
  flow::FlowParams theta0 = theta;
  psinet::PsiParams lam = psinet::PsiParams::zeros({2, 8, 1});
  numkit::SampleBatch batch = numkit::sample_std_gaussian(rng, 2, 16);
  Vec g = outer_objective_grad(theta, theta0, lam, batch, 0.0, 0.005, quad(2));
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("outer gradient is linear in the psi cotangent at h=0") {
  numkit::Rng rng(2);
  flow::FlowParams theta = flow::FlowParams::identity_trainable(2, 3, rng);
  psinet::PsiParams lam = psinet::PsiParams::he_init({2, 8, 1}, rng);
  numkit::SampleBatch batch = numkit::sample_std_gaussian(rng, 2, 16);
  Vec g1 = outer_objective_grad(theta, theta, lam, batch, 0.0, 0.005, quad(2));
  psinet::PsiParams lam2 = lam;
  for (double& w : lam2.layers.back().W) w *= 2.0;
  Vec g2 = outer_objective_grad(theta, theta, lam2, batch, 0.0, 0.005, quad(2));
  for (std::size_t i = 0; i < g1.size(); ++i)
    CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-10));
}

TEST_CASE("outer gradient matches finite differences") {
  numkit::Rng rng(3);
  const int d = 2, L = 2;
  flow::FlowParams theta = flow::FlowParams::identity_trainable(d, L, rng);
  Vec tf = theta.to_flat();
  Vec noise(tf.size());
  rng.fill_gaussian(noise);
  for (std::size_t i = 0; i < tf.size(); ++i) tf[i] += 0.3 * noise[i];
  theta = flow::FlowParams::from_flat(d, L, tf);
  flow::FlowParams theta0 = flow::FlowParams::identity_trainable(d, L, rng);
  psinet::PsiParams lam = psinet::PsiParams::he_init({d, 6, 1}, rng);
  numkit::SampleBatch batch = numkit::sample_std_gaussian(rng, d, 8);
  auto pot = quad(d);
  Vec g = outer_objective_grad(theta, theta0, lam, batch, 0.005, 0.005, pot);
  Vec flat = theta.to_flat();
  const double step = 1e-5;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    Vec fp = flat, fm = flat;
    fp[i] += step;
    fm[i] -= step;
    double jp = outer_objective_value(flow::FlowParams::from_flat(d, L, fp), theta0, lam, batch,
                                      0.005, 0.005, pot);
    double jm = outer_objective_value(flow::FlowParams::from_flat(d, L, fm), theta0, lam, batch,
                                      0.005, 0.005, pot);
    double fd = (jp - jm) / (2 * step);
    CHECK(std::fabs(g[i] - fd) / std::max({1e-6, std::fabs(fd), std::fabs(g[i])}) <= 1e-4);
  }
}

TEST_CASE("m_out = 0 leaves theta untouched") {
  SolverConfig cfg = tiny_config(2);
  cfg.m_out = 0;
  flow::FlowParams theta0 = make_initial_flow(cfg);
  SolverState st(theta0, cfg);
  time_step(st, cfg, quad(2));
  CHECK(st.theta.to_flat() == theta0.to_flat());
}

TEST_CASE("time_step is deterministic for a fixed seed") {
  SolverConfig cfg = tiny_config(2);
  auto pot = quad(2);
  flow::FlowParams theta0 = make_initial_flow(cfg);
  SolverState a(theta0, cfg), b(theta0, cfg);
  time_step(a, cfg, pot);
  time_step(b, cfg, pot);
  CHECK(a.theta.to_flat() == b.theta.to_flat());
  CHECK(a.psi.to_flat() == b.psi.to_flat());
}

TEST_CASE("inner loop always evaluates at the frozen base map") {
  struct Probe : StepObserver {
    const flow::FlowParams* theta0 = nullptr;
    int calls = 0;
    double worst = 0.0;
    void on_inner_batch(const numkit::SampleBatch& x, const Vec& eval_points,
                        const Vec& targets) override {
      (void)targets;
      ++calls;
      numkit::SampleBatch expect = flow::flow_push(*theta0, x);
      for (std::size_t i = 0; i < eval_points.size(); ++i)
        worst = std::max(worst, std::fabs(eval_points[i] - expect.data[i]));
    }
  };
  SolverConfig cfg = tiny_config(2);
  cfg.m_out = 3;
  cfg.m_in = 2;
  auto pot = quad(2);
  flow::FlowParams theta0 = make_initial_flow(cfg);
  SolverState st(theta0, cfg);
  Probe probe;
  probe.theta0 = &theta0;
  time_step(st, cfg, pot, &probe);
  CHECK(probe.calls == 6);
  CHECK(probe.worst == 0.0);
  // theta itself moved, so the frozen evaluation was not vacuous
  CHECK(st.theta.to_flat() != theta0.to_flat());
}

TEST_CASE("rescaled and unscaled outer gradients share their direction") {
  // with the inner problem solved exactly over affine psi, grad J_eps is
  // (1/eps) grad J_1, so the normalized directions agree
  numkit::Rng rng(5);
  const int d = 2, L = 1;
  flow::FlowParams theta0 = flow::FlowParams::identity_trainable(d, L, rng);
  Vec tf = theta0.to_flat();
  Vec dtf(tf.size());
  rng.fill_gaussian(dtf);
  for (std::size_t i = 0; i < tf.size(); ++i) tf[i] += 0.01 * dtf[i];
  flow::FlowParams theta = flow::FlowParams::from_flat(d, L, tf);
  numkit::SampleBatch batch = numkit::sample_std_gaussian(rng, d, 256);
  auto pot = quad(d);
  const double h = 0.005, alpha = 0.005;

  auto optimal_affine_psi = [&](double eps) {
    numkit::SampleBatch y = flow::flow_push(theta, batch);
    numkit::SampleBatch y0 = flow::flow_push(theta0, batch);
    Vec mean(d, 0.0);
    for (int k = 0; k < batch.count; ++k)
      for (int i = 0; i < d; ++i)
        mean[i] += (y.row(k)[i] - y0.row(k)[i]) / eps / batch.count;
    psinet::PsiParams aff = psinet::PsiParams::zeros({d, 1});
    aff.layers[0].W = mean;
    return aff;
  };

  Vec g1 = outer_objective_grad(theta, theta0, optimal_affine_psi(1.0), batch, h, 1.0, pot);
  Vec ge = outer_objective_grad(theta, theta0, optimal_affine_psi(alpha), batch, h, alpha, pot);
  double n1 = 0.0, n2 = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    n1 += g1[i] * g1[i];
    n2 += ge[i] * ge[i];
    dot += g1[i] * ge[i];
  }
  double cosine = dot / std::sqrt(n1 * n2);
  CHECK(1.0 - cosine <= 1e-3);
}

TEST_CASE("solve snapshot bookkeeping") {
  SolverConfig cfg = tiny_config(2);
  cfg.steps = 0;
  auto pot = quad(2);
  RunResult r0 = solve(make_initial_flow(cfg), cfg, pot);
  CHECK(r0.snapshots.size() == 1);
  CHECK(r0.snapshots[0].t == 0.0);

  cfg.steps = 5;
  cfg.snapshot_stride = 2;
  RunResult r = solve(make_initial_flow(cfg), cfg, pot);
  CHECK(static_cast<int>(r.snapshots.size()) == 5 / 2 + 1);
  CHECK(r.snapshots.back().t == doctest::Approx(4 * cfg.h));
  for (std::size_t i = 0; i < r.snapshots.size(); ++i)
    CHECK(r.snapshots[i].t == doctest::Approx(2.0 * i * cfg.h));
}

TEST_CASE("solve is bit-deterministic") {
  SolverConfig cfg = tiny_config(2);
  auto pot = quad(2);
  RunResult a = solve(make_initial_flow(cfg), cfg, pot);
  RunResult b = solve(make_initial_flow(cfg), cfg, pot);
  REQUIRE(a.snapshots.size() == b.snapshots.size());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    CHECK(a.snapshots[i].entropy == b.snapshots[i].entropy);
    CHECK(a.snapshots[i].mean == b.snapshots[i].mean);
    CHECK(a.snapshots[i].theta.to_flat() == b.snapshots[i].theta.to_flat());
  }
}

TEST_CASE("flat solve with a zero gradient override stays put") {
  SolverConfig cfg = tiny_config(2);
  auto pot = quad(2);
  flow::FlowParams theta0 = make_initial_flow(cfg);
  GradFn zero = [&](const flow::FlowParams& p) { return Vec(p.param_count(), 0.0); };
  RunResult r = flat_gradient_solve(theta0, cfg, pot, zero);
  CHECK(r.snapshots.back().theta.to_flat() == theta0.to_flat());
}

TEST_CASE("flat solve moves toward the target on its own gradient") {
  SolverConfig cfg = tiny_config(2);
  cfg.steps = 30;
  cfg.h = 0.05;
  cfg.snapshot_stride = 30;
  auto pot = quad(2);
  RunResult r = flat_gradient_solve(make_initial_flow(cfg), cfg, pot);
  CHECK(r.snapshots.back().entropy < r.snapshots.front().entropy);
}

TEST_CASE("divergence guard throws a structured error") {
  SolverConfig cfg = tiny_config(2);
  auto pot = quad(2);
  GradFn bomb = [&](const flow::FlowParams& p) {
    return Vec(p.param_count(), std::numeric_limits<double>::infinity());
  };
  CHECK_THROWS_AS(flat_gradient_solve(make_initial_flow(cfg), cfg, pot, bomb), SolveDiverged);
}

TEST_CASE("strict identity flow stalls and the trainable one moves") {
  SolverConfig cfg = tiny_config(2);
  cfg.steps = 1;
  auto pot = quad(2);

  SolverConfig strict = cfg;
  strict.init = SolverConfig::Init::strict_identity;
  flow::FlowParams s0 = make_initial_flow(strict);
  RunResult rs = solve(s0, strict, pot);
  CHECK(rs.snapshots.back().theta.to_flat() == s0.to_flat());

  flow::FlowParams t0 = make_initial_flow(cfg);
  RunResult rt = solve(t0, cfg, pot);
  CHECK(rt.snapshots.back().theta.to_flat() != t0.to_flat());
}

TEST_CASE("tiny solve smoke: entropy finite and flow usable") {
  SolverConfig cfg = tiny_config(2);
  cfg.steps = 3;
  auto pot = quad(2);
  RunResult r = solve(make_initial_flow(cfg), cfg, pot);
  for (const auto& s : r.snapshots) {
    CHECK(std::isfinite(s.entropy));
    CHECK(std::isfinite(s.mean[0]));
  }
  CHECK(r.psi.all_finite());
}

}  // TEST_SUITE
