#pragma once

#include <functional>
#include <optional>

#include "wassflow/common.hpp"
#include "wassflow/flow.hpp"
#include "wassflow/numkit.hpp"
#include "wassflow/optim.hpp"
#include "wassflow/potential.hpp"
#include "wassflow/psinet.hpp"

namespace wassflow::scheme {

struct SolverConfig {
  int dim = 2;
  double h = 0.005;
  int steps = 140;  // N
  int m_out = 20;
  int m_in = 100;
  int k_out = 1000;
  int k_in = 1000;
  double alpha_out = 0.005;
  double alpha_in = 0.0005;
  double eps_rescale = 0.005;  // defaults to alpha_out (see finalize)
  std::uint64_t seed = 0;
  int snapshot_stride = 1;
  int eval_samples = 6000;
  int flow_length = 60;
  int psi_hidden = 20;
  int psi_depth = 6;  // affine layers
  bool psi_warm_start = true;
  double init_noise_std = 0.0;

  enum class Init { strict_identity, trainable_identity };
  Init init = Init::trainable_identity;

  enum class Optimizer { adam, sgd };
  Optimizer optimizer = Optimizer::adam;

  static int default_batch(int dim) { return std::max(1000, 300 * dim); }

  // M_out = O(h / alpha_out); the constant 20 reproduces the reported runs.
  static int suggested_m_out(double h, double alpha_out, int c = 20);

  std::vector<int> psi_widths() const;
  void validate() const;
};

struct Snapshot {
  double t = 0.0;
  flow::FlowParams theta;
  double entropy = 0.0;
  double entropy_stderr = 0.0;
  Vec mean;
  numkit::SmallSymMatrix cov;
};

struct RunResult {
  std::vector<Snapshot> snapshots;
  psinet::PsiParams psi;
};

class SolveDiverged : public Error {
public:
  SolveDiverged(const std::string& msg, int step, double t) : Error(msg), step(step), t(t) {}
  int step = 0;
  double t = 0.0;
};

// Test hook: sees every inner-loop batch with the evaluation points and
// rescaled displacement targets that were actually used.
struct StepObserver {
  virtual ~StepObserver() = default;
  virtual void on_inner_batch(const numkit::SampleBatch& x, const Vec& eval_points,
                              const Vec& targets) = 0;
};

// Objective of one outer iteration (theta0 and lambda frozen):
//   mean[ 2 grad_psi(T_theta0(X)) . T_theta(X)
//         + (2h/eps) (V(T_theta(X)) + beta (log p(X) - logdet(X))) ]
double outer_objective_value(const flow::FlowParams& theta, const flow::FlowParams& theta0,
                             const psinet::PsiParams& lam, const numkit::SampleBatch& batch,
                             double h, double eps, const potential::PotentialSpec& pot);

Vec outer_objective_grad(const flow::FlowParams& theta, const flow::FlowParams& theta0,
                         const psinet::PsiParams& lam, const numkit::SampleBatch& batch,
                         double h, double eps, const potential::PotentialSpec& pot);

// Mutable solver state; optimizer moments persist across time steps.
struct SolverState {
  flow::FlowParams theta;
  psinet::PsiParams psi;
  optim::AdamState adam_theta;
  optim::AdamState adam_psi;
  numkit::Rng train_rng;
  numkit::Rng psi_init_rng;
  psinet::PsiWorkspace psi_ws;

  SolverState(flow::FlowParams theta0, const SolverConfig& cfg);
};

// One step of the nested-loop scheme; theta0 is frozen at entry.
void time_step(SolverState& st, const SolverConfig& cfg, const potential::PotentialSpec& pot,
               StepObserver* observer = nullptr);

RunResult solve(const flow::FlowParams& theta_init, const SolverConfig& cfg,
                const potential::PotentialSpec& pot);

// Baseline: forward Euler on theta <- theta - h grad H(theta), fresh batch
// per step, no dual network. grad_override substitutes the Monte-Carlo
// entropy gradient in tests.
using GradFn = std::function<Vec(const flow::FlowParams&)>;
RunResult flat_gradient_solve(const flow::FlowParams& theta_init, const SolverConfig& cfg,
                              const potential::PotentialSpec& pot,
                              const GradFn& grad_override = nullptr);

flow::FlowParams make_initial_flow(const SolverConfig& cfg);

}  // namespace wassflow::scheme
