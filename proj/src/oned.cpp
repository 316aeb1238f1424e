#include "wassflow/oned.hpp"

#include <cmath>

namespace wassflow::oned {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835607;

double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

Quadrature Quadrature::gauss_hermite(int order) {
  if (order < 2) throw Error("gauss_hermite: order must be >= 2");
  // Golub-Welsch on the probabilists' Hermite Jacobi matrix: zero diagonal,
  // off-diagonal sqrt(k).
  numkit::SmallSymMatrix J(order);
  for (int k = 1; k < order; ++k) {
    J.at(k - 1, k) = std::sqrt(static_cast<double>(k));
    J.at(k, k - 1) = J.at(k - 1, k);
  }
  numkit::EigenSym e = numkit::eigh(J);
  Quadrature q;
  q.nodes = e.values;
  q.weights.resize(order);
  for (int j = 0; j < order; ++j) {
    double v0 = e.vectors[static_cast<std::size_t>(0) * order + j];
    q.weights[j] = v0 * v0;
  }
  return q;
}

Flow1D Flow1D::affine(double theta1, double theta2) {
  if (!(theta1 > 0.0)) throw Error("flow not invertible on support");
  Flow1D f;
  f.affine_ = true;
  f.theta1_ = theta1;
  f.theta2_ = theta2;
  return f;
}

Flow1D Flow1D::planar(flow::FlowParams params) {
  if (params.dim != 1) throw Error("Flow1D::planar: flow must have dim 1");
  Flow1D f;
  f.affine_ = false;
  f.planar_ = std::move(params);
  return f;
}

int Flow1D::param_count() const {
  return affine_ ? 2 : planar_.param_count();
}

Vec Flow1D::params() const {
  if (affine_) return {theta1_, theta2_};
  return planar_.to_flat();
}

Flow1D Flow1D::with_params(const Vec& p) const {
  if (affine_) {
    if (p.size() != 2) throw Error("Flow1D::with_params: size mismatch");
    return affine(p[0], p[1]);
  }
  return planar(flow::FlowParams::from_flat(1, static_cast<int>(planar_.layers.size()), p));
}

Flow1D::Eval Flow1D::eval(double x) const {
  Eval ev;
  if (affine_) {
    ev.value = theta1_ * x + theta2_;
    ev.deriv = theta1_;
    ev.deriv2 = 0.0;
    ev.d_theta = {x, 1.0};
    ev.d_theta_deriv = {1.0, 0.0};
    return ev;
  }

  const int m = planar_.param_count();
  ev.d_theta.assign(m, 0.0);
  ev.d_theta_deriv.assign(m, 0.0);
  double v = x, vp = 1.0, vpp = 0.0;

  for (std::size_t li = 0; li < planar_.layers.size(); ++li) {
    const auto& layer = planar_.layers[li];
    const double w = layer.w[0], u = layer.u_raw[0], b = layer.b;
    const int base = static_cast<int>(li) * 3;

    double uhat, du_dw, du_du;
    double mval, dm_dw, dm_du;  // m = w * uhat (the softplus image), and partials
    if (w == 0.0) {
      uhat = u;
      du_dw = 0.0;
      du_du = 1.0;
      mval = 0.0;
      dm_dw = u;  // d(w u_hat)/dw on the frozen branch
      dm_du = 0.0;
    } else {
      double t = w * u;
      double sp = softplus(t);
      double sig = sigmoid(t);
      mval = sp - 1.0;
      uhat = u + (mval - t) / w;
      // t depends on both w and u
      du_dw = u * (sig - 1.0) / w - (mval - t) / (w * w);
      du_du = sig;
      dm_dw = sig * u;
      dm_du = sig * w;
    }

    double s = w * v + b;
    double tau = std::tanh(s);
    double hp = 1.0 - tau * tau;
    double hpp = -2.0 * tau * hp;

    double g = v + tau * uhat;
    double gp = 1.0 + hp * w * uhat;   // dg/dz at z = v
    double gpp = hpp * w * w * uhat;   // d2g/dz2

    // layer-parameter partials at input z = v
    double dg_dw = hp * v * uhat + tau * du_dw;
    double dg_du = tau * du_du;
    double dg_db = hp * uhat;
    // gp = 1 + hp * m with m = w.uhat, and hp depends on s = w v + b
    double dgp_dw = hpp * v * mval + hp * dm_dw;
    double dgp_du = hp * dm_du;
    double dgp_db = hpp * mval;

    // chain the accumulated parameter derivatives (earlier layers)
    for (int j = 0; j < base; ++j) {
      double dv = ev.d_theta[j];
      ev.d_theta_deriv[j] = (gpp * dv) * vp + gp * ev.d_theta_deriv[j];
      ev.d_theta[j] = gp * dv;
    }
    ev.d_theta[base + 0] = dg_dw;
    ev.d_theta[base + 1] = dg_du;
    ev.d_theta[base + 2] = dg_db;
    ev.d_theta_deriv[base + 0] = dgp_dw * vp;
    ev.d_theta_deriv[base + 1] = dgp_du * vp;
    ev.d_theta_deriv[base + 2] = dgp_db * vp;

    vpp = gpp * vp * vp + gp * vpp;
    vp = gp * vp;
    v = g;
  }

  ev.value = v;
  ev.deriv = vp;
  ev.deriv2 = vpp;
  if (!(vp > 0.0)) throw Error("flow not invertible on support");
  return ev;
}

numkit::SmallSymMatrix metric_1d(const Flow1D& flow, const Quadrature& quad) {
  const int m = flow.param_count();
  numkit::SmallSymMatrix g(m);
  for (std::size_t q = 0; q < quad.nodes.size(); ++q) {
    Flow1D::Eval ev = flow.eval(quad.nodes[q]);
    double wq = quad.weights[q];
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) g.at(i, j) += wq * ev.d_theta[i] * ev.d_theta[j];
  }
  g.symmetrize();
  return g;
}

double entropy_1d(const Flow1D& flow, const potential::PotentialSpec& pot,
                  const Quadrature& quad) {
  if (pot.dim != 1) throw Error("entropy_1d: potential must be 1D");
  double acc = 0.0;
  for (std::size_t q = 0; q < quad.nodes.size(); ++q) {
    double x = quad.nodes[q];
    Flow1D::Eval ev = flow.eval(x);
    double logp = -0.5 * (kLog2Pi + x * x);
    double y[1] = {ev.value};
    acc += quad.weights[q] *
           (potential::potential_value(pot, y) + pot.beta * (logp - std::log(ev.deriv)));
  }
  return acc;
}

Vec grad_H_1d(const Flow1D& flow, const potential::PotentialSpec& pot,
              const Quadrature& quad) {
  if (pot.dim != 1) throw Error("grad_H_1d: potential must be 1D");
  const int m = flow.param_count();
  Vec g(m, 0.0);
  for (std::size_t q = 0; q < quad.nodes.size(); ++q) {
    double x = quad.nodes[q];
    Flow1D::Eval ev = flow.eval(x);
    double y[1] = {ev.value};
    double vp[1];
    potential::potential_grad(pot, y, vp);
    double wq = quad.weights[q];
    for (int i = 0; i < m; ++i)
      g[i] += wq * (vp[0] * ev.d_theta[i] - pot.beta * ev.d_theta_deriv[i] / ev.deriv);
  }
  return g;
}

Delta1Breakdown delta1_residual_1d(const Flow1D& flow, const potential::PotentialSpec& pot,
                                   const Quadrature& quad) {
  if (pot.dim != 1) throw Error("delta1_residual_1d: potential must be 1D");
  Delta1Breakdown out;
  for (std::size_t q = 0; q < quad.nodes.size(); ++q) {
    double x = quad.nodes[q];
    Flow1D::Eval ev = flow.eval(x);
    double y[1] = {ev.value};
    double vp[1];
    potential::potential_grad(pot, y, vp);
    // d/dy log rho at y = T(x): (d/dx [log p(x) - log T'(x)]) / T'(x)
    double dlog = (-x - ev.deriv2 / ev.deriv) / ev.deriv;
    double field = vp[0] + pot.beta * dlog;
    out.fisher_term += quad.weights[q] * field * field;
  }
  Vec gh = grad_H_1d(flow, pot, quad);
  numkit::SmallSymMatrix g = metric_1d(flow, quad);
  numkit::Cholesky ch = numkit::cholesky(g, 1e-12);
  Vec sol = ch.solve(gh);
  for (std::size_t i = 0; i < gh.size(); ++i) out.gradient_term += gh[i] * sol[i];
  out.residual = std::max(0.0, out.fisher_term - out.gradient_term);
  return out;
}

std::vector<Flow1D> forward_euler_solve_1d(const Flow1D& flow0,
                                           const potential::PotentialSpec& pot, double h,
                                           int steps, const Quadrature& quad) {
  if (!(h > 0.0) || steps < 0) throw Error("forward_euler_solve_1d: invalid h or steps");
  std::vector<Flow1D> traj;
  traj.reserve(steps + 1);
  traj.push_back(flow0);
  Flow1D cur = flow0;
  for (int n = 0; n < steps; ++n) {
    numkit::SmallSymMatrix g = metric_1d(cur, quad);
    numkit::EigenSym eg = numkit::eigh(g);
    double lmax = eg.values.back(), lmin = eg.values.front();
    if (!(lmin > 0.0) || lmax / lmin > 1e12) throw Error("metric degenerate");
    numkit::Cholesky ch = numkit::cholesky(g, 1e-12);
    Vec gh = grad_H_1d(cur, pot, quad);
    Vec xi = ch.solve(gh);
    Vec p = cur.params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= h * xi[i];
    cur = cur.with_params(p);
    traj.push_back(cur);
  }
  return traj;
}

}  // namespace wassflow::oned
