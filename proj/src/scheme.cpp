#include "wassflow/scheme.hpp"

#include <cmath>

namespace wassflow::scheme {

int SolverConfig::suggested_m_out(double h, double alpha_out, int c) {
  double ratio = h / alpha_out;
  int m = static_cast<int>(std::lround(c * ratio));
  return std::max(1, m);
}

std::vector<int> SolverConfig::psi_widths() const {
  std::vector<int> w;
  w.push_back(dim);
  for (int l = 0; l < psi_depth - 1; ++l) w.push_back(psi_hidden);
  w.push_back(1);
  return w;
}

void SolverConfig::validate() const {
  if (dim < 1) throw Error("config: dim must be >= 1");
  if (!(h > 0.0)) throw Error("config: dt must be positive");
  if (steps < 0 || m_out < 0 || m_in < 0) throw Error("config: counts must be >= 0");
  if (k_out < 1 || k_in < 1 || eval_samples < 2) throw Error("config: batch sizes too small");
  if (!(alpha_out > 0.0) || !(alpha_in > 0.0)) throw Error("config: learning rates must be positive");
  if (!(eps_rescale > 0.0)) throw Error("config: eps-rescale must be positive");
  if (snapshot_stride < 1) throw Error("config: snapshot-stride must be >= 1");
  if (flow_length < 1) throw Error("config: flow-length must be >= 1");
  if (psi_depth < 2 || psi_hidden < 1) throw Error("config: psi network too small");
}

SolverState::SolverState(flow::FlowParams theta0, const SolverConfig& cfg)
    : theta(std::move(theta0)),
      psi(psinet::PsiParams::zeros(cfg.psi_widths())),
      adam_theta(optim::AdamState::for_size(theta.to_flat().size())),
      adam_psi(optim::AdamState::for_size(0)),
      train_rng(numkit::Rng(cfg.seed)),
      psi_init_rng(numkit::Rng::stream(cfg.seed, 2)) {
  psi = psinet::PsiParams::he_init_zero_last(cfg.psi_widths(), psi_init_rng);
  adam_psi = optim::AdamState::for_size(psi.to_flat().size());
}

namespace {

// cotangents of the outer objective; grad V is evaluated at the moving
// pushforward, grad psi at the frozen one.
void outer_cotangents(const flow::ForwardResult& moved, const Vec& psi_grads,
                      const potential::PotentialSpec& pot, double h, double eps, int count,
                      Vec& out_cot, Vec& ld_cot) {
  const int d = pot.dim;
  const double hfac = 2.0 * h / eps;
  out_cot.resize(static_cast<std::size_t>(count) * d);
  ld_cot.assign(count, -hfac * pot.beta);
  Vec vg(d);
  for (int k = 0; k < count; ++k) {
    std::span<const double> y(moved.out.row(k), static_cast<std::size_t>(d));
    potential::potential_grad(pot, y, vg);
    for (int i = 0; i < d; ++i)
      out_cot[static_cast<std::size_t>(k) * d + i] =
          2.0 * psi_grads[static_cast<std::size_t>(k) * d + i] + hfac * vg[i];
  }
}

}  // namespace

double outer_objective_value(const flow::FlowParams& theta, const flow::FlowParams& theta0,
                             const psinet::PsiParams& lam, const numkit::SampleBatch& batch,
                             double h, double eps, const potential::PotentialSpec& pot) {
  const int d = batch.dim, K = batch.count;
  flow::ForwardResult moved = flow::flow_forward(theta, batch, false);
  numkit::SampleBatch frozen = flow::flow_push(theta0, batch);
  psinet::PsiWorkspace ws;
  psinet::psi_input_grad_batch(lam, frozen.data, K, ws);
  const double hfac = 2.0 * h / eps;
  double acc = 0.0;
  for (int k = 0; k < K; ++k) {
    std::span<const double> x(batch.row(k), static_cast<std::size_t>(d));
    std::span<const double> y(moved.out.row(k), static_cast<std::size_t>(d));
    double dotpg = 0.0;
    for (int i = 0; i < d; ++i)
      dotpg += ws.grads[static_cast<std::size_t>(k) * d + i] * y[i];
    acc += 2.0 * dotpg +
           hfac * (potential::potential_value(pot, y) +
                   pot.beta * (flow::std_gaussian_logpdf(x) - moved.logdets[k]));
  }
  return acc / K;
}

Vec outer_objective_grad(const flow::FlowParams& theta, const flow::FlowParams& theta0,
                         const psinet::PsiParams& lam, const numkit::SampleBatch& batch,
                         double h, double eps, const potential::PotentialSpec& pot) {
  if (batch.dim != theta.dim || theta0.dim != theta.dim || lam.dim() != theta.dim)
    throw Error("outer_objective_grad: dimension mismatch");
  flow::ForwardResult moved = flow::flow_forward(theta, batch, true);
  numkit::SampleBatch frozen = flow::flow_push(theta0, batch);
  psinet::PsiWorkspace ws;
  psinet::psi_input_grad_batch(lam, frozen.data, batch.count, ws);
  Vec out_cot, ld_cot;
  outer_cotangents(moved, ws.grads, pot, h, eps, batch.count, out_cot, ld_cot);
  return flow::flow_vjp_theta(theta, *moved.trace, out_cot, ld_cot);
}

void time_step(SolverState& st, const SolverConfig& cfg, const potential::PotentialSpec& pot,
               StepObserver* observer) {
  const int d = cfg.dim;
  const flow::FlowParams theta0 = st.theta;  // frozen at entry

  if (!cfg.psi_warm_start) {
    st.psi = psinet::PsiParams::he_init_zero_last(cfg.psi_widths(), st.psi_init_rng);
    st.adam_psi = optim::AdamState::for_size(st.psi.to_flat().size());
  }

  Vec psi_flat = st.psi.to_flat();
  Vec theta_flat = st.theta.to_flat();
  const double inv_eps = 1.0 / cfg.eps_rescale;

  for (int j = 0; j < cfg.m_out; ++j) {
    for (int p = 0; p < cfg.m_in; ++p) {
      numkit::SampleBatch x = numkit::sample_std_gaussian(st.train_rng, d, cfg.k_in);
      numkit::SampleBatch frozen = flow::flow_push(theta0, x);
      numkit::SampleBatch moved = flow::flow_push(st.theta, x);
      Vec targets(static_cast<std::size_t>(cfg.k_in) * d);
      for (std::size_t i = 0; i < targets.size(); ++i)
        targets[i] = (moved.data[i] - frozen.data[i]) * inv_eps;
      if (observer) observer->on_inner_batch(x, frozen.data, targets);
      auto res = psinet::inner_loss_grad_lambda(st.psi, targets, frozen.data, cfg.k_in, st.psi_ws);
      if (cfg.optimizer == SolverConfig::Optimizer::adam)
        optim::adam_step(st.adam_psi, psi_flat, res.grad, cfg.alpha_in);
      else
        optim::sgd_step(psi_flat, res.grad, cfg.alpha_in);
      st.psi = psinet::PsiParams::from_flat(cfg.psi_widths(), psi_flat);
    }

    numkit::SampleBatch x = numkit::sample_std_gaussian(st.train_rng, d, cfg.k_out);
    Vec grad = outer_objective_grad(st.theta, theta0, st.psi, x, cfg.h, cfg.eps_rescale, pot);
    if (cfg.optimizer == SolverConfig::Optimizer::adam)
      optim::adam_step(st.adam_theta, theta_flat, grad, cfg.alpha_out);
    else
      optim::sgd_step(theta_flat, grad, cfg.alpha_out);
    st.theta = flow::FlowParams::from_flat(d, cfg.flow_length, theta_flat);
  }
}

namespace {

Snapshot take_snapshot(const flow::FlowParams& theta, const potential::PotentialSpec& pot,
                       const SolverConfig& cfg, numkit::Rng& eval_rng, double t) {
  numkit::SampleBatch ref = numkit::sample_std_gaussian(eval_rng, cfg.dim, cfg.eval_samples);
  flow::ForwardResult fr = flow::flow_forward(theta, ref, false);
  Snapshot s;
  s.t = t;
  s.theta = theta;
  flow::EntropyStats es = flow::entropy_stats(theta, pot, ref);
  s.entropy = es.value;
  s.entropy_stderr = es.stderr_;
  auto mc = numkit::empirical_mean_cov(fr.out);
  s.mean = std::move(mc.first);
  s.cov = std::move(mc.second);
  return s;
}

void divergence_guard(const flow::FlowParams& theta, double entropy, double entropy0, int step,
                      double t) {
  if (!theta.all_finite())
    throw SolveDiverged("solver diverged: non-finite flow parameters", step, t);
  if (entropy > entropy0 + 1e3)
    throw SolveDiverged("solver diverged: entropy estimate exploded", step, t);
}

}  // namespace

RunResult solve(const flow::FlowParams& theta_init, const SolverConfig& cfg,
                const potential::PotentialSpec& pot) {
  cfg.validate();
  if (theta_init.dim != pot.dim || theta_init.dim != cfg.dim)
    throw Error("solve: dimension mismatch between flow, potential and config");
  if (static_cast<int>(theta_init.layers.size()) != cfg.flow_length)
    throw Error("solve: flow length does not match config");

  SolverState st(theta_init, cfg);
  numkit::Rng eval_rng = numkit::Rng::stream(cfg.seed, 1);

  RunResult out;
  out.snapshots.push_back(take_snapshot(st.theta, pot, cfg, eval_rng, 0.0));
  const double entropy0 = out.snapshots.front().entropy;

  for (int k = 1; k <= cfg.steps; ++k) {
    time_step(st, cfg, pot);
    if (!st.theta.all_finite())
      throw SolveDiverged("solver diverged: non-finite flow parameters", k, k * cfg.h);
    if (k % cfg.snapshot_stride == 0) {
      Snapshot s = take_snapshot(st.theta, pot, cfg, eval_rng, k * cfg.h);
      divergence_guard(st.theta, s.entropy, entropy0, k, s.t);
      out.snapshots.push_back(std::move(s));
    }
  }
  out.psi = st.psi;
  return out;
}

RunResult flat_gradient_solve(const flow::FlowParams& theta_init, const SolverConfig& cfg,
                              const potential::PotentialSpec& pot, const GradFn& grad_override) {
  cfg.validate();
  if (theta_init.dim != pot.dim || theta_init.dim != cfg.dim)
    throw Error("flat_gradient_solve: dimension mismatch");
  if (static_cast<int>(theta_init.layers.size()) != cfg.flow_length)
    throw Error("flat_gradient_solve: flow length does not match config");

  numkit::Rng train_rng(cfg.seed);
  numkit::Rng eval_rng = numkit::Rng::stream(cfg.seed, 1);
  flow::FlowParams theta = theta_init;

  RunResult out;
  out.snapshots.push_back(take_snapshot(theta, pot, cfg, eval_rng, 0.0));
  const double entropy0 = out.snapshots.front().entropy;

  for (int k = 1; k <= cfg.steps; ++k) {
    Vec grad;
    if (grad_override) {
      grad = grad_override(theta);
    } else {
      numkit::SampleBatch x = numkit::sample_std_gaussian(train_rng, cfg.dim, cfg.k_out);
      grad = flow::entropy_grad(theta, pot, x);
    }
    Vec flat = theta.to_flat();
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= cfg.h * grad[i];
    theta = flow::FlowParams::from_flat(cfg.dim, cfg.flow_length, flat);
    if (!theta.all_finite())
      throw SolveDiverged("solver diverged: non-finite flow parameters", k, k * cfg.h);
    if (k % cfg.snapshot_stride == 0) {
      Snapshot s = take_snapshot(theta, pot, cfg, eval_rng, k * cfg.h);
      divergence_guard(theta, s.entropy, entropy0, k, s.t);
      out.snapshots.push_back(std::move(s));
    }
  }
  out.psi = psinet::PsiParams::zeros(cfg.psi_widths());
  return out;
}

flow::FlowParams make_initial_flow(const SolverConfig& cfg) {
  if (cfg.init == SolverConfig::Init::strict_identity)
    return flow::FlowParams::identity(cfg.dim, cfg.flow_length);
  numkit::Rng rng = numkit::Rng::stream(cfg.seed, 3);
  flow::FlowParams p = flow::FlowParams::identity_trainable(cfg.dim, cfg.flow_length, rng);
  if (cfg.init_noise_std > 0.0) {
    for (auto& layer : p.layers) {
      Vec noise(cfg.dim);
      rng.fill_gaussian(noise);
      for (int i = 0; i < cfg.dim; ++i) layer.w[i] += cfg.init_noise_std * noise[i];
    }
  }
  return p;
}

}  // namespace wassflow::scheme
