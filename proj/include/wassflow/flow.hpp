#pragma once

#include <optional>
#include <span>

#include "wassflow/common.hpp"
#include "wassflow/numkit.hpp"
#include "wassflow/potential.hpp"

namespace wassflow::flow {

struct PlanarLayer {
  Vec w;
  Vec u_raw;
  double b = 0.0;
};

struct FlowParams {
  int dim = 0;
  std::vector<PlanarLayer> layers;

  // Strict identity: w = 0, b = 0, u_raw = 0. The map is the identity and all
  // log-determinants vanish, but every parameter Jacobian vanishes too, so
  // this configuration cannot be trained (see identity_trainable).
  static FlowParams identity(int dim, int length);

  // Exact identity that SGD can leave: unit random w, b = 0 and
  // u_raw = log(e-1) w, which puts the constrained direction u_hat at zero
  // while keeping the reparameterization smooth (|w| bounded away from 0).
  static FlowParams identity_trainable(int dim, int length, numkit::Rng& rng);

  int param_count() const { return static_cast<int>(layers.size()) * (2 * dim + 1); }

  // Flat layout: for each layer in order, w[0..d), u_raw[0..d), b.
  Vec to_flat() const;
  static FlowParams from_flat(int dim, int length, const Vec& flat);

  bool all_finite() const;
};

// u_hat = u_raw + (m(w.u_raw) - w.u_raw) w / |w|^2, m(s) = -1 + log(1+e^s),
// which forces w.u_hat = m(...) > -1. Zero w returns u_raw unchanged.
Vec constrain_u(const Vec& w, const Vec& u_raw);

struct ForwardTrace {
  int dim = 0;
  int count = 0;
  int layer_count = 0;
  std::vector<Vec> x_in;  // per layer, count x dim inputs
  std::vector<Vec> tau;   // per layer, tanh of pre-activations
};

struct ForwardResult {
  numkit::SampleBatch out;
  Vec logdets;  // per point, sum of layer contributions
  std::optional<ForwardTrace> trace;
};

std::pair<Vec, double> layer_forward(const PlanarLayer& layer, std::span<const double> x);

ForwardResult flow_forward(const FlowParams& params, const numkit::SampleBatch& batch,
                           bool record);

// Values-only fast path for the inner loop (no log-determinants).
numkit::SampleBatch flow_push(const FlowParams& params, const numkit::SampleBatch& batch);

// log rho_theta(T_theta(x)) = log p(x) - logdet, with p standard Gaussian.
double pushforward_logdensity(const FlowParams& params, std::span<const double> x,
                              double logdet);

double std_gaussian_logpdf(std::span<const double> x);

struct EntropyStats {
  double value = 0.0;
  double stderr_ = 0.0;
};

// Monte-Carlo estimate of H(theta) = E_p[ V(T(X)) + beta (log p(X) - logdet(X)) ].
EntropyStats entropy_stats(const FlowParams& params, const potential::PotentialSpec& pot,
                           const numkit::SampleBatch& batch);
double entropy_estimate(const FlowParams& params, const potential::PotentialSpec& pot,
                        const numkit::SampleBatch& batch);

// Mean over the batch of (d out / d theta)^T out_cot + (d logdet / d theta)^T ld_cot,
// returned in the flat layout of FlowParams::to_flat.
Vec flow_vjp_theta(const FlowParams& params, const ForwardTrace& trace,
                   const Vec& out_cotangent, const Vec& logdet_cotangent);

// Gradient of entropy_estimate on a fixed batch (cotangents grad V / -beta).
Vec entropy_grad(const FlowParams& params, const potential::PotentialSpec& pot,
                 const numkit::SampleBatch& batch);

}  // namespace wassflow::flow
