#include "wassflow/psinet.hpp"

#include <cmath>
#include <cstring>

#include "wassflow/simd_kernels.hpp"

namespace wassflow::psinet {

namespace {

void check_widths(const std::vector<int>& widths) {
  if (widths.size() < 2) throw Error("psinet: need at least one affine layer");
  for (int w : widths)
    if (w < 1) throw Error("psinet: widths must be positive");
  if (widths.back() != 1) throw Error("psinet: output width must be 1");
}

}  // namespace

std::vector<int> PsiParams::default_widths(int dim) {
  return {dim, 20, 20, 20, 20, 20, 1};
}

PsiParams PsiParams::zeros(std::vector<int> widths) {
  check_widths(widths);
  PsiParams p;
  p.widths = std::move(widths);
  p.layers.resize(p.widths.size() - 1);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    p.layers[l].W.assign(static_cast<std::size_t>(p.widths[l + 1]) * p.widths[l], 0.0);
    p.layers[l].b.assign(p.widths[l + 1], 0.0);
  }
  return p;
}

PsiParams PsiParams::he_init(std::vector<int> widths, numkit::Rng& rng) {
  PsiParams p = zeros(std::move(widths));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    double std_dev = std::sqrt(2.0 / p.widths[l]);
    rng.fill_gaussian(p.layers[l].W);
    for (double& v : p.layers[l].W) v *= std_dev;
    // Biases receive no gradient through the mask-constant rule, so they act
    // as fixed random features; nonzero values keep the ReLU regions a real
    // hyperplane arrangement instead of cones through the origin.
    double bias_dev = 1.0 / std::sqrt(static_cast<double>(p.widths[l]));
    rng.fill_gaussian(p.layers[l].b);
    for (double& v : p.layers[l].b) v *= bias_dev;
  }
  return p;
}

PsiParams PsiParams::he_init_zero_last(std::vector<int> widths, numkit::Rng& rng) {
  PsiParams p = he_init(std::move(widths), rng);
  for (double& w : p.layers.back().W) w = 0.0;
  return p;
}

int PsiParams::param_count() const {
  int n = 0;
  for (std::size_t l = 0; l < layers.size(); ++l)
    n += widths[l + 1] * widths[l] + widths[l + 1];
  return n;
}

Vec PsiParams::to_flat() const {
  Vec flat;
  flat.reserve(param_count());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.W.begin(), l.W.end());
    flat.insert(flat.end(), l.b.begin(), l.b.end());
  }
  return flat;
}

PsiParams PsiParams::from_flat(std::vector<int> widths, const Vec& flat) {
  PsiParams p = zeros(std::move(widths));
  if (static_cast<int>(flat.size()) != p.param_count())
    throw Error("PsiParams::from_flat: size mismatch");
  std::size_t k = 0;
  for (auto& l : p.layers) {
    std::copy(flat.begin() + k, flat.begin() + k + l.W.size(), l.W.begin());
    k += l.W.size();
    std::copy(flat.begin() + k, flat.begin() + k + l.b.size(), l.b.begin());
    k += l.b.size();
  }
  return p;
}

bool PsiParams::all_finite() const {
  for (const auto& l : layers) {
    for (double v : l.W)
      if (!std::isfinite(v)) return false;
    for (double v : l.b)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

void ensure_ws(const PsiParams& lam, int count, PsiWorkspace& ws, bool need_chains) {
  const auto& w = lam.widths;
  const std::size_t hidden = w.size() - 2;
  ws.preact.resize(hidden);
  ws.act.resize(hidden + 1);
  for (std::size_t l = 0; l < hidden; ++l) {
    ws.preact[l].resize(static_cast<std::size_t>(count) * w[l + 1]);
    ws.act[l + 1].resize(static_cast<std::size_t>(count) * w[l + 1]);
  }
  ws.grads.resize(static_cast<std::size_t>(count) * w.front());
  ws.values.resize(count);
  if (need_chains) {
    ws.rbuf.resize(hidden);
    ws.ubuf.resize(hidden);
    for (std::size_t l = 0; l < hidden; ++l) {
      ws.rbuf[l].resize(static_cast<std::size_t>(count) * w[l + 1]);
      ws.ubuf[l].resize(static_cast<std::size_t>(count) * w[l + 1]);
    }
  }
}

// Forward through the hidden stack; leaves activations in ws.act (act[0]
// aliases `points` through a copy) and pre-activations in ws.preact.
void hidden_forward(const PsiParams& lam, const Vec& points, int count, PsiWorkspace& ws) {
  const auto& ops = kern::active();
  const auto& w = lam.widths;
  const std::size_t hidden = w.size() - 2;
  const Vec* z = &points;
  for (std::size_t l = 0; l < hidden; ++l) {
    parallel_for(count, [&](std::size_t lo, std::size_t hi, int) {
      std::size_t rows = hi - lo;
      ops.gemm_nt(z->data() + lo * w[l], lam.layers[l].W.data(),
                  ws.preact[l].data() + lo * w[l + 1], rows, w[l], w[l + 1],
                  lam.layers[l].b.data(), false);
      ops.relu(ws.preact[l].data() + lo * w[l + 1], ws.act[l + 1].data() + lo * w[l + 1],
               rows * w[l + 1]);
    });
    z = &ws.act[l + 1];
  }
}

// Input-gradient chain R_l back from the output layer; fills ws.grads.
void grad_chain(const PsiParams& lam, int count, PsiWorkspace& ws) {
  const auto& ops = kern::active();
  const auto& w = lam.widths;
  const std::size_t hidden = w.size() - 2;
  const int d = w.front();

  if (hidden == 0) {
    // single affine layer: grad psi = W row, constant in x
    const Vec& W = lam.layers[0].W;
    for (int k = 0; k < count; ++k)
      std::memcpy(ws.grads.data() + static_cast<std::size_t>(k) * d, W.data(),
                  static_cast<std::size_t>(d) * sizeof(double));
    return;
  }

  parallel_for(count, [&](std::size_t lo, std::size_t hi, int) {
    std::size_t rows = hi - lo;
    // R_{last hidden}: output row of W_L broadcast, masked by its preacts
    {
      std::size_t l = hidden - 1;
      const Vec& WL = lam.layers[hidden].W;  // 1 x n_last
      double* r = ws.rbuf[l].data() + lo * w[l + 1];
      for (std::size_t k = 0; k < rows; ++k)
        std::memcpy(r + k * w[l + 1], WL.data(), static_cast<std::size_t>(w[l + 1]) * sizeof(double));
      ops.relu_mask(ws.preact[l].data() + lo * w[l + 1], r, rows * w[l + 1]);
    }
    for (std::size_t l = hidden - 1; l > 0; --l) {
      ops.gemm_nn(ws.rbuf[l].data() + lo * w[l + 1], lam.layers[l].W.data(),
                  ws.rbuf[l - 1].data() + lo * w[l], rows, w[l + 1], w[l], false);
      ops.relu_mask(ws.preact[l - 1].data() + lo * w[l], ws.rbuf[l - 1].data() + lo * w[l],
                    rows * w[l]);
    }
    ops.gemm_nn(ws.rbuf[0].data() + lo * w[1], lam.layers[0].W.data(),
                ws.grads.data() + lo * d, rows, w[1], d, false);
  });
}

}  // namespace

void psi_value_batch(const PsiParams& lam, const Vec& points, int count, PsiWorkspace& ws) {
  ensure_ws(lam, count, ws, false);
  hidden_forward(lam, points, count, ws);
  const auto& ops = kern::active();
  const auto& w = lam.widths;
  const std::size_t hidden = w.size() - 2;
  const Vec& z = hidden == 0 ? points : ws.act[hidden];
  ops.gemm_nt(z.data(), lam.layers[hidden].W.data(), ws.values.data(), count,
              w[hidden], 1, lam.layers[hidden].b.data(), false);
}

void psi_input_grad_batch(const PsiParams& lam, const Vec& points, int count,
                          PsiWorkspace& ws) {
  ensure_ws(lam, count, ws, true);
  hidden_forward(lam, points, count, ws);
  grad_chain(lam, count, ws);
}

double psi_forward(const PsiParams& lam, std::span<const double> x) {
  if (static_cast<int>(x.size()) != lam.dim()) throw Error("psi_forward: dimension mismatch");
  PsiWorkspace ws;
  Vec pt(x.begin(), x.end());
  psi_value_batch(lam, pt, 1, ws);
  return ws.values[0];
}

Vec psi_input_grad(const PsiParams& lam, std::span<const double> x) {
  if (static_cast<int>(x.size()) != lam.dim()) throw Error("psi_input_grad: dimension mismatch");
  PsiWorkspace ws;
  Vec pt(x.begin(), x.end());
  psi_input_grad_batch(lam, pt, 1, ws);
  return ws.grads;
}

double inner_loss(const PsiParams& lam, const Vec& target, const Vec& eval_points, int count) {
  const int d = lam.dim();
  if (target.size() != eval_points.size() ||
      target.size() != static_cast<std::size_t>(count) * d)
    throw Error("inner_loss: sample counts must match");
  PsiWorkspace ws;
  psi_input_grad_batch(lam, eval_points, count, ws);
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    double dif = ws.grads[i] - target[i];
    acc += dif * dif;
  }
  return acc / count;
}

InnerLossResult inner_loss_grad_lambda(const PsiParams& lam, const Vec& target,
                                       const Vec& eval_points, int count, PsiWorkspace& ws) {
  const auto& ops = kern::active();
  const auto& w = lam.widths;
  const int d = lam.dim();
  const std::size_t hidden = w.size() - 2;
  if (target.size() != eval_points.size() ||
      target.size() != static_cast<std::size_t>(count) * d)
    throw Error("inner_loss_grad_lambda: sample counts must match");

  psi_input_grad_batch(lam, eval_points, count, ws);

  InnerLossResult res;
  res.grad.assign(PsiParams::zeros(lam.widths).param_count(), 0.0);

  // E = (2/K)(G - V), also accumulate the loss itself
  Vec E(static_cast<std::size_t>(count) * d);
  double acc = 0.0;
  const double scale = 2.0 / count;
  for (std::size_t i = 0; i < E.size(); ++i) {
    double dif = ws.grads[i] - target[i];
    acc += dif * dif;
    E[i] = scale * dif;
  }
  res.loss = acc / count;

  // u-chain forward from the input side
  const Vec* u = &E;
  for (std::size_t l = 0; l < hidden; ++l) {
    parallel_for(count, [&](std::size_t lo, std::size_t hi, int) {
      std::size_t rows = hi - lo;
      ops.gemm_nt(u->data() + lo * w[l], lam.layers[l].W.data(),
                  ws.ubuf[l].data() + lo * w[l + 1], rows, w[l], w[l + 1], nullptr, false);
      ops.relu_mask(ws.preact[l].data() + lo * w[l + 1], ws.ubuf[l].data() + lo * w[l + 1],
                    rows * w[l + 1]);
    });
    u = &ws.ubuf[l];
  }

  // dW_l = R_l^T U_{l-1} for hidden layers, column sums of U_{last} for W_L
  std::size_t off = 0;
  for (std::size_t l = 0; l < hidden; ++l) {
    const Vec& uprev = (l == 0) ? E : ws.ubuf[l - 1];
    ops.gemm_tn(ws.rbuf[l].data(), uprev.data(), res.grad.data() + off, count,
                w[l + 1], w[l], true);
    off += static_cast<std::size_t>(w[l + 1]) * w[l] + w[l + 1];  // bias grads stay zero
  }
  {
    const Vec& ulast = (hidden == 0) ? E : ws.ubuf[hidden - 1];
    double* gW = res.grad.data() + off;
    for (int k = 0; k < count; ++k) {
      const double* row = ulast.data() + static_cast<std::size_t>(k) * w[hidden];
      for (int j = 0; j < w[hidden]; ++j) gW[j] += row[j];
    }
  }
  return res;
}

}  // namespace wassflow::psinet
