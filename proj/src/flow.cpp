#include "wassflow/flow.hpp"

#include <cmath>
#include <cstring>

#include "wassflow/simd_kernels.hpp"

namespace wassflow::flow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835607;

double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}

// Per-layer quantities shared by a whole batch.
struct LayerCtx {
  const PlanarLayer* layer = nullptr;
  Vec u_hat;
  double t = 0.0;      // w . u_raw
  double m = 0.0;      // w . u_hat (softplus form); 0 on the w = 0 branch
  double sig = 0.0;    // sigmoid(t)
  double c = 0.0;      // (m - t) / |w|^2
  double wnorm2 = 0.0;
  bool w_zero = true;
};

LayerCtx make_ctx(const PlanarLayer& layer) {
  LayerCtx ctx;
  ctx.layer = &layer;
  for (double v : layer.w)
    if (!std::isfinite(v)) throw Error("non-finite layer parameters");
  for (double v : layer.u_raw)
    if (!std::isfinite(v)) throw Error("non-finite layer parameters");
  if (!std::isfinite(layer.b)) throw Error("non-finite layer parameters");
  double wn = 0.0, t = 0.0;
  for (std::size_t i = 0; i < layer.w.size(); ++i) {
    wn += layer.w[i] * layer.w[i];
    t += layer.w[i] * layer.u_raw[i];
  }
  ctx.wnorm2 = wn;
  ctx.w_zero = (wn == 0.0);
  ctx.u_hat = layer.u_raw;
  if (!ctx.w_zero) {
    ctx.t = t;
    ctx.m = softplus(t) - 1.0;
    ctx.sig = sigmoid(t);
    ctx.c = (ctx.m - t) / wn;
    for (std::size_t i = 0; i < layer.w.size(); ++i) ctx.u_hat[i] += ctx.c * layer.w[i];
  }
  return ctx;
}

}  // namespace

Vec constrain_u(const Vec& w, const Vec& u_raw) {
  if (w.size() != u_raw.size()) throw Error("constrain_u: dimension mismatch");
  PlanarLayer tmp{w, u_raw, 0.0};
  return make_ctx(tmp).u_hat;
}

FlowParams FlowParams::identity(int dim, int length) {
  FlowParams p;
  p.dim = dim;
  p.layers.assign(length, PlanarLayer{Vec(dim, 0.0), Vec(dim, 0.0), 0.0});
  return p;
}

FlowParams FlowParams::identity_trainable(int dim, int length, numkit::Rng& rng) {
  FlowParams p;
  p.dim = dim;
  p.layers.resize(length);
  const double c = std::log(std::exp(1.0) - 1.0);
  for (auto& layer : p.layers) {
    layer.w.resize(dim);
    layer.u_raw.resize(dim);
    // u_hat = 0 makes the layer the identity for any w and b. Random biases
    // keep the tangent fields tanh(w.x + b) u from all being odd in x; with
    // b = 0 the tangent space at the identity cannot express a mean shift
    // and the optimizer starts on a symmetry saddle.
    layer.b = 0.5 * rng.next_gaussian();
    double n2 = 0.0;
    do {
      rng.fill_gaussian(layer.w);
      n2 = 0.0;
      for (double v : layer.w) n2 += v * v;
    } while (n2 < 1e-12);
    double inv = 1.0 / std::sqrt(n2);
    for (int i = 0; i < dim; ++i) {
      layer.w[i] *= inv;
      layer.u_raw[i] = c * layer.w[i];
    }
  }
  return p;
}

Vec FlowParams::to_flat() const {
  Vec flat;
  flat.reserve(param_count());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.w.begin(), l.w.end());
    flat.insert(flat.end(), l.u_raw.begin(), l.u_raw.end());
    flat.push_back(l.b);
  }
  return flat;
}

FlowParams FlowParams::from_flat(int dim, int length, const Vec& flat) {
  if (static_cast<int>(flat.size()) != length * (2 * dim + 1))
    throw Error("FlowParams::from_flat: size mismatch");
  FlowParams p;
  p.dim = dim;
  p.layers.resize(length);
  std::size_t k = 0;
  for (auto& l : p.layers) {
    l.w.assign(flat.begin() + k, flat.begin() + k + dim);
    k += dim;
    l.u_raw.assign(flat.begin() + k, flat.begin() + k + dim);
    k += dim;
    l.b = flat[k++];
  }
  return p;
}

bool FlowParams::all_finite() const {
  for (const auto& l : layers) {
    for (double v : l.w)
      if (!std::isfinite(v)) return false;
    for (double v : l.u_raw)
      if (!std::isfinite(v)) return false;
    if (!std::isfinite(l.b)) return false;
  }
  return true;
}

std::pair<Vec, double> layer_forward(const PlanarLayer& layer, std::span<const double> x) {
  if (x.size() != layer.w.size()) throw Error("layer_forward: dimension mismatch");
  LayerCtx ctx = make_ctx(layer);
  double s = layer.b;
  for (std::size_t i = 0; i < x.size(); ++i) s += layer.w[i] * x[i];
  double tau = std::tanh(s);
  Vec y(x.begin(), x.end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += tau * ctx.u_hat[i];
  double hp = 1.0 - tau * tau;
  double ld = std::log1p(hp * ctx.m);
  return {y, ld};
}

namespace {

struct BatchEval {
  numkit::SampleBatch out;
  Vec logdets;
  ForwardTrace trace;
};

void run_forward(const FlowParams& params, const numkit::SampleBatch& batch,
                 bool want_logdet, bool want_trace, BatchEval& ev) {
  if (batch.dim != params.dim) throw Error("flow_forward: dimension mismatch");
  const int K = batch.count, d = batch.dim;
  const auto& ops = kern::active();

  ev.out = batch;
  if (want_logdet) ev.logdets.assign(K, 0.0);
  if (want_trace) {
    ev.trace.dim = d;
    ev.trace.count = K;
    ev.trace.layer_count = static_cast<int>(params.layers.size());
    ev.trace.x_in.resize(params.layers.size());
    ev.trace.tau.resize(params.layers.size());
  }

  Vec s(K), tau(K);
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    LayerCtx ctx = make_ctx(params.layers[li]);
    const double* w = ctx.layer->w.data();
    if (want_trace) ev.trace.x_in[li] = ev.out.data;

    parallel_for(K, [&](std::size_t lo, std::size_t hi, int) {
      for (std::size_t k = lo; k < hi; ++k) {
        const double* x = ev.out.row(static_cast<int>(k));
        double acc = ctx.layer->b;
        for (int i = 0; i < d; ++i) acc += w[i] * x[i];
        s[k] = acc;
      }
      ops.vtanh(s.data() + lo, tau.data() + lo, hi - lo);
      for (std::size_t k = lo; k < hi; ++k) {
        double* x = ev.out.row(static_cast<int>(k));
        double tk = tau[k];
        for (int i = 0; i < d; ++i) x[i] += tk * ctx.u_hat[i];
      }
      if (want_logdet && ctx.m != 0.0) {
        for (std::size_t k = lo; k < hi; ++k)
          ev.logdets[k] += std::log1p((1.0 - tau[k] * tau[k]) * ctx.m);
      }
    });
    if (want_trace) ev.trace.tau[li] = tau;
  }
}

}  // namespace

ForwardResult flow_forward(const FlowParams& params, const numkit::SampleBatch& batch,
                           bool record) {
  BatchEval ev;
  run_forward(params, batch, true, record, ev);
  ForwardResult r;
  r.out = std::move(ev.out);
  r.logdets = std::move(ev.logdets);
  if (record) r.trace = std::move(ev.trace);
  return r;
}

numkit::SampleBatch flow_push(const FlowParams& params, const numkit::SampleBatch& batch) {
  BatchEval ev;
  run_forward(params, batch, false, false, ev);
  return std::move(ev.out);
}

double std_gaussian_logpdf(std::span<const double> x) {
  double q = 0.0;
  for (double v : x) q += v * v;
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + q);
}

double pushforward_logdensity(const FlowParams& params, std::span<const double> x,
                              double logdet) {
  (void)params;
  return std_gaussian_logpdf(x) - logdet;
}

EntropyStats entropy_stats(const FlowParams& params, const potential::PotentialSpec& pot,
                           const numkit::SampleBatch& batch) {
  if (batch.dim != params.dim || pot.dim != params.dim)
    throw Error("entropy_stats: dimension mismatch");
  ForwardResult fr = flow_forward(params, batch, false);
  const int K = batch.count;
  double beta = pot.beta;
  double sum = 0.0, sumsq = 0.0;
  for (int k = 0; k < K; ++k) {
    std::span<const double> x(batch.row(k), static_cast<std::size_t>(batch.dim));
    std::span<const double> y(fr.out.row(k), static_cast<std::size_t>(batch.dim));
    double h = potential::potential_value(pot, y) +
               beta * (std_gaussian_logpdf(x) - fr.logdets[k]);
    sum += h;
    sumsq += h * h;
  }
  EntropyStats st;
  st.value = sum / K;
  double var = (sumsq - sum * sum / K) / std::max(1, K - 1);
  st.stderr_ = std::sqrt(std::max(0.0, var) / K);
  return st;
}

double entropy_estimate(const FlowParams& params, const potential::PotentialSpec& pot,
                        const numkit::SampleBatch& batch) {
  return entropy_stats(params, pot, batch).value;
}

Vec flow_vjp_theta(const FlowParams& params, const ForwardTrace& trace,
                   const Vec& out_cotangent, const Vec& logdet_cotangent) {
  const int K = trace.count, d = params.dim;
  const int L = static_cast<int>(params.layers.size());
  if (trace.layer_count != L || trace.dim != d)
    throw Error("flow_vjp_theta: trace/params mismatch");
  if (out_cotangent.size() != static_cast<std::size_t>(K) * d ||
      logdet_cotangent.size() != static_cast<std::size_t>(K))
    throw Error("flow_vjp_theta: cotangent size mismatch");

  Vec ybar = out_cotangent;  // mutated as the cotangent flows backward
  Vec grad(params.param_count(), 0.0);

  for (int li = L - 1; li >= 0; --li) {
    LayerCtx ctx = make_ctx(params.layers[li]);
    const Vec& xin = trace.x_in[li];
    const Vec& tau = trace.tau[li];
    const double* w = ctx.layer->w.data();
    const double* u = ctx.layer->u_raw.data();
    double* gw = grad.data() + static_cast<std::size_t>(li) * (2 * d + 1);
    double* gu = gw + d;
    double* gb = gu + d;

    if (ctx.w_zero) {
      for (int k = 0; k < K; ++k) {
        const double* yb = ybar.data() + static_cast<std::size_t>(k) * d;
        const double* x = xin.data() + static_cast<std::size_t>(k) * d;
        double tk = tau[k];
        double hp = 1.0 - tk * tk;
        double alpha = 0.0;
        for (int i = 0; i < d; ++i) alpha += ctx.u_hat[i] * yb[i];
        double sbar = hp * alpha;
        double ldk = logdet_cotangent[k];
        for (int i = 0; i < d; ++i) {
          gw[i] += sbar * x[i] + ldk * hp * u[i];
          gu[i] += tk * yb[i];
        }
        *gb += sbar;
        // x-cotangent unchanged: dy/dx = I when w = 0
      }
    } else {
      for (int k = 0; k < K; ++k) {
        double* yb = ybar.data() + static_cast<std::size_t>(k) * d;
        const double* x = xin.data() + static_cast<std::size_t>(k) * d;
        double tk = tau[k];
        double hp = 1.0 - tk * tk;
        double D = 1.0 + hp * ctx.m;
        double alpha = 0.0, wy = 0.0;
        for (int i = 0; i < d; ++i) {
          alpha += ctx.u_hat[i] * yb[i];
          wy += w[i] * yb[i];
        }
        double ldk = logdet_cotangent[k];
        double sbar = hp * alpha - ldk * (2.0 * tk * hp * ctx.m) / D;
        double tbar = ldk * (hp * ctx.sig / D) + (ctx.sig - 1.0) * (tk * wy) / ctx.wnorm2;
        double wcoef = -2.0 * ctx.c * (tk * wy) / ctx.wnorm2;
        for (int i = 0; i < d; ++i) {
          gw[i] += sbar * x[i] + ctx.c * tk * yb[i] + wcoef * w[i] + tbar * u[i];
          gu[i] += tk * yb[i] + tbar * w[i];
        }
        *gb += sbar;
        for (int i = 0; i < d; ++i) yb[i] += sbar * w[i];
      }
    }
  }

  double inv = 1.0 / K;
  for (double& g : grad) g *= inv;
  return grad;
}

Vec entropy_grad(const FlowParams& params, const potential::PotentialSpec& pot,
                 const numkit::SampleBatch& batch) {
  ForwardResult fr = flow_forward(params, batch, true);
  const int K = batch.count, d = batch.dim;
  Vec out_cot(static_cast<std::size_t>(K) * d);
  Vec ld_cot(K, -pot.beta);
  for (int k = 0; k < K; ++k) {
    std::span<const double> y(fr.out.row(k), static_cast<std::size_t>(d));
    std::span<double> g(out_cot.data() + static_cast<std::size_t>(k) * d,
                        static_cast<std::size_t>(d));
    potential::potential_grad(pot, y, g);
  }
  return flow_vjp_theta(params, *fr.trace, out_cot, ld_cot);
}

}  // namespace wassflow::flow
