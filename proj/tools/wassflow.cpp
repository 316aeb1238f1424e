// Command-line driver: solves Fokker-Planck equations with the normalizing-
// flow scheme and exposes the exact-solution oracles and diagnostics.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "wassflow/oned.hpp"
#include "wassflow/run_io.hpp"

namespace fs = std::filesystem;
using namespace wassflow;
using nlohmann::json;

namespace {

struct ListFlags {
  std::string mu;
  std::string sigma_diag;
};

Vec parse_list_arg(const std::string& s) {
  Vec out;
  std::string tok;
  std::stringstream ss(s);
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

void add_common_flags(CLI::App* sub, run_io::RunOptions& o, ListFlags& lists) {
  auto& s = o.solver;
  sub->add_option("--config", o.config_path, "config file (flat key=value, or manifest.json to replay)");
  sub->add_option("--potential", o.potential_name, "quadratic | styblinski_tang | rosenbrock");
  sub->add_option("--dim", s.dim, "sample-space dimension");
  sub->add_option("--beta", o.beta, "diffusion coefficient");
  sub->add_option("--dt", s.h, "time step");
  sub->add_option("--steps", s.steps, "number of time steps");
  sub->add_option("--flow-length,--flow_length", s.flow_length, "planar layers in T_theta");
  sub->add_option("--m-out,--m_out", s.m_out, "outer iterations per step");
  sub->add_option("--m-in,--m_in", s.m_in, "inner iterations per outer iteration");
  sub->add_option("--k-out,--k_out", s.k_out, "outer batch size")
      ->each([&o](const std::string&) { o.k_out_explicit = true; });
  sub->add_option("--k-in,--k_in", s.k_in, "inner batch size")
      ->each([&o](const std::string&) { o.k_in_explicit = true; });
  sub->add_option("--lr-out,--lr_out", s.alpha_out, "outer learning rate");
  sub->add_option("--lr-in,--lr_in", s.alpha_in, "inner learning rate");
  sub->add_option("--eps-rescale,--eps_rescale", s.eps_rescale, "inner-target rescale (default lr-out)")
      ->each([&o](const std::string&) { o.eps_explicit = true; });
  sub->add_option("--seed", s.seed, "RNG seed");
  sub->add_option("--snapshot-stride,--snapshot_stride", s.snapshot_stride, "steps between snapshots");
  sub->add_option("--eval-samples,--eval_samples", s.eval_samples, "snapshot evaluation batch");
  sub->add_option("--plane", o.plane, "density plane 'i-j'");
  sub->add_option("--out", o.out_dir, "output directory");
  sub->add_option("--mu", lists.mu, "quadratic mean (comma list)");
  sub->add_option("--sigma-diag,--sigma_diag", lists.sigma_diag,
                  "quadratic sigma diagonal (comma list)");
  sub->add_option("--st-scale,--st_scale", o.st_scale, "Styblinski-Tang scale");
  sub->add_option("--rosen-scale,--rosen_scale", o.rosen_scale, "Rosenbrock scale");
  sub->add_option("--rosen-curvature,--rosen_curvature", o.rosen_curvature, "Rosenbrock inner factor");
  sub->add_option("--init", o.init_mode, "flow init: trainable | strict");
  sub->add_option("--optimizer", o.optimizer, "adam | sgd");
  sub->add_option("--psi-depth,--psi_depth", s.psi_depth, "psi affine layers");
  sub->add_option("--psi-hidden,--psi_hidden", s.psi_hidden, "psi hidden width");
  sub->add_flag("--psi-cold-start,--psi_cold_start",
                [&o](std::int64_t) { o.psi_warm_start = false; },
                "re-initialize psi each time step");
}

void preload_config(int argc, char** argv, run_io::RunOptions& o) {
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") {
      o.config_path = argv[i + 1];
      run_io::load_config_file(o.config_path, o);
      return;
    }
}

int run_solve(run_io::RunOptions& o, bool flat) {
  auto pot = run_io::build_potential(o);
  run_io::write_manifest(o);
  flow::FlowParams theta0 = scheme::make_initial_flow(o.solver);
  try {
    scheme::RunResult res = flat ? scheme::flat_gradient_solve(theta0, o.solver, pot)
                                 : scheme::solve(theta0, o.solver, pot);
    run_io::write_stats_json(o.out_dir, res, o, pot);
    run_io::write_sample_outputs(o.out_dir, res, o);
    run_io::write_flow_params((fs::path(o.out_dir) / "flow_final.txt").string(),
                              res.snapshots.back().theta);
    if (!flat)
      run_io::write_psi_params((fs::path(o.out_dir) / "psi_final.txt").string(), res.psi);
  } catch (const scheme::SolveDiverged& e) {
    run_io::write_error_record(o.out_dir, e.what(), e.step, e.t);
    std::cerr << "error: " << e.what() << " (step " << e.step << ", t " << e.t << ")\n";
    return 2;
  }
  return 0;
}

int run_baseline_em(run_io::RunOptions& o) {
  auto pot = run_io::build_potential(o);
  run_io::write_manifest(o);
  numkit::Rng rng(o.solver.seed);
  numkit::SampleBatch x = numkit::sample_std_gaussian(rng, o.solver.dim, o.particles);
  std::vector<run_io::EmSnapshot> snaps;
  snaps.push_back({0.0, 0, x});
  int done = 0;
  try {
    for (int k = o.solver.snapshot_stride; k <= o.solver.steps; k += o.solver.snapshot_stride) {
      x = reference::euler_maruyama(pot, o.beta, x, o.solver.h, k - done, rng);
      done = k;
      snaps.push_back({k * o.solver.h, k, x});
    }
  } catch (const Error& e) {
    run_io::write_error_record(o.out_dir, e.what(), done, done * o.solver.h);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  run_io::write_em_outputs(o.out_dir, snaps, o, pot);
  return 0;
}

int run_exact_affine(run_io::RunOptions& o) {
  auto pot = run_io::build_potential(o);
  run_io::write_manifest(o);
  const int d = o.solver.dim;
  reference::AffineState init;
  init.dim = d;
  init.gamma.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) init.gamma[static_cast<std::size_t>(i) * d + i] = 1.0;
  init.b.assign(d, 0.0);

  int total = static_cast<int>(std::lround(o.t_end / o.rk4_h));
  auto traj = reference::affine_ode_solve(pot, o.beta, init, o.rk4_h, total);

  reference::GaussianState g0 = reference::affine_pushforward(init);
  std::vector<run_io::AffineRow> rows;
  int report_every = std::max(1, static_cast<int>(std::lround(0.1 / o.rk4_h)));
  for (int n = 0; n <= total; n += report_every) {
    run_io::AffineRow r;
    r.t = n * o.rk4_h;
    r.state = traj[n];
    reference::GaussianState ex = reference::ou_exact(pot, o.beta, g0, r.t);
    r.w2_to_exact = reference::gaussian_w2(reference::affine_pushforward(traj[n]), ex);
    rows.push_back(std::move(r));
  }
  run_io::write_affine_stats(o.out_dir, rows);
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, r.w2_to_exact);
  std::cout << "exact-affine: max gaussian_w2_to_exact = " << worst << "\n";
  return 0;
}

int run_solve_1d(run_io::RunOptions& o) {
  o.solver.dim = 1;
  auto pot = run_io::build_potential(o);
  run_io::write_manifest(o);
  oned::Quadrature quad = oned::Quadrature::gauss_hermite(o.quad_order);
  oned::Flow1D f0 = o.family == "affine"
                        ? oned::Flow1D::affine(o.theta1, o.theta2)
                        : oned::Flow1D::planar(
                              o.flow_file.empty()
                                  ? flow::FlowParams::identity(1, o.solver.flow_length)
                                  : run_io::read_flow_params(o.flow_file));
  try {
    auto traj = oned::forward_euler_solve_1d(f0, pot, o.solver.h, o.solver.steps, quad);
    fs::create_directories(o.out_dir);
    std::ofstream out(fs::path(o.out_dir) / "trajectory.csv");
    out << "t";
    for (int i = 0; i < f0.param_count(); ++i) out << ",theta" << i;
    out << ",entropy\n";
    for (std::size_t n = 0; n < traj.size(); ++n) {
      if (n % o.solver.snapshot_stride != 0 && n + 1 != traj.size()) continue;
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", n * o.solver.h);
      out << buf;
      for (double v : traj[n].params()) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << "," << buf;
      }
      std::snprintf(buf, sizeof(buf), "%.17g", oned::entropy_1d(traj[n], pot, quad));
      out << "," << buf << "\n";
    }
  } catch (const Error& e) {
    run_io::write_error_record(o.out_dir, e.what(), -1, 0.0);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run_diagnose_delta1(run_io::RunOptions& o) {
  o.solver.dim = 1;
  auto pot = run_io::build_potential(o);
  run_io::write_manifest(o);
  oned::Quadrature quad = oned::Quadrature::gauss_hermite(o.quad_order);
  oned::Flow1D f = o.family == "affine"
                       ? oned::Flow1D::affine(o.theta1, o.theta2)
                       : oned::Flow1D::planar(run_io::read_flow_params(o.flow_file));
  oned::Delta1Breakdown d = oned::delta1_residual_1d(f, pot, quad);
  json j;
  j["fisher_term"] = d.fisher_term;
  j["gradient_term"] = d.gradient_term;
  j["residual"] = d.residual;
  std::cout << j.dump(2) << "\n";
  fs::create_directories(o.out_dir);
  std::ofstream out(fs::path(o.out_dir) / "delta1.json");
  out << j.dump(2) << "\n";
  return 0;
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1e-6, std::fabs(a), std::fabs(b)});
}

// Central finite differences against the analytic gradients on random small
// instances; the acceptance gate runs this with the default settings.
int run_gradcheck(run_io::RunOptions& o) {
  run_io::write_manifest(o);
  const int instances = 50;
  const double step = 1e-5, tol = 1e-4;
  numkit::Rng rng(o.solver.seed + 12345);
  double worst_entropy = 0.0, worst_outer = 0.0, worst_inner = 0.0;

  for (int inst = 0; inst < instances; ++inst) {
    int d = 1 + static_cast<int>(rng.next_u64() % 3);
    int layers = 3;
    flow::FlowParams theta = flow::FlowParams::identity_trainable(d, layers, rng);
    Vec noise(theta.param_count());
    rng.fill_gaussian(noise);
    Vec tf = theta.to_flat();
    for (std::size_t i = 0; i < tf.size(); ++i) tf[i] += 0.25 * noise[i];
    theta = flow::FlowParams::from_flat(d, layers, tf);

    potential::PotentialSpec pot =
        d >= 2 && inst % 3 == 2
            ? potential::PotentialSpec::rosenbrock(d, 1.0)
            : (inst % 3 == 1 ? potential::PotentialSpec::styblinski_tang(d, 1.0)
                             : potential::PotentialSpec::quadratic(
                                   Vec(d, 0.5), numkit::SmallSymMatrix::identity(d), 1.0));
    numkit::SampleBatch batch = numkit::sample_std_gaussian(rng, d, 8);

    // entropy gradient
    {
      Vec g = flow::entropy_grad(theta, pot, batch);
      Vec flat = theta.to_flat();
      for (std::size_t i = 0; i < flat.size(); ++i) {
        Vec fp = flat, fm = flat;
        fp[i] += step;
        fm[i] -= step;
        double hp = flow::entropy_estimate(flow::FlowParams::from_flat(d, layers, fp), pot, batch);
        double hm = flow::entropy_estimate(flow::FlowParams::from_flat(d, layers, fm), pot, batch);
        worst_entropy = std::max(worst_entropy, rel_err(g[i], (hp - hm) / (2 * step)));
      }
    }

    // outer objective gradient
    {
      numkit::Rng prng(o.solver.seed + 777 + inst);
      psinet::PsiParams lam = psinet::PsiParams::he_init({d, 8, 8, 1}, prng);
      flow::FlowParams theta0 = flow::FlowParams::identity_trainable(d, layers, prng);
      Vec g = scheme::outer_objective_grad(theta, theta0, lam, batch, 0.005, 0.005, pot);
      Vec flat = theta.to_flat();
      for (std::size_t i = 0; i < flat.size(); ++i) {
        Vec fp = flat, fm = flat;
        fp[i] += step;
        fm[i] -= step;
        double jp = scheme::outer_objective_value(flow::FlowParams::from_flat(d, layers, fp),
                                                  theta0, lam, batch, 0.005, 0.005, pot);
        double jm = scheme::outer_objective_value(flow::FlowParams::from_flat(d, layers, fm),
                                                  theta0, lam, batch, 0.005, 0.005, pot);
        worst_outer = std::max(worst_outer, rel_err(g[i], (jp - jm) / (2 * step)));
      }
    }

    // inner loss lambda-gradient, away from activation boundaries
    {
      numkit::Rng prng(o.solver.seed + 999 + inst);
      std::vector<int> widths = {d, 6, 6, 1};
      psinet::PsiParams lam = psinet::PsiParams::he_init(widths, prng);
      int count = 8;
      numkit::SampleBatch pts = numkit::sample_std_gaussian(prng, d, count);
      psinet::PsiWorkspace ws;
      bool boundary = true;
      for (int tries = 0; tries < 50 && boundary; ++tries) {
        psinet::psi_input_grad_batch(lam, pts.data, count, ws);
        boundary = false;
        for (const auto& pre : ws.preact)
          for (double a : pre)
            if (std::fabs(a) < 1e-3) boundary = true;
        if (boundary) pts = numkit::sample_std_gaussian(prng, d, count);
      }
      Vec targets(static_cast<std::size_t>(count) * d);
      prng.fill_gaussian(targets);
      auto res = psinet::inner_loss_grad_lambda(lam, targets, pts.data, count, ws);
      Vec flat = lam.to_flat();
      for (std::size_t i = 0; i < flat.size(); ++i) {
        Vec fp = flat, fm = flat;
        fp[i] += step;
        fm[i] -= step;
        double lp = psinet::inner_loss(psinet::PsiParams::from_flat(widths, fp), targets,
                                       pts.data, count);
        double lm = psinet::inner_loss(psinet::PsiParams::from_flat(widths, fm), targets,
                                       pts.data, count);
        worst_inner = std::max(worst_inner, rel_err(res.grad[i], (lp - lm) / (2 * step)));
      }
    }
  }

  json j;
  j["instances"] = instances;
  j["fd_step"] = step;
  j["tolerance"] = tol;
  j["max_rel_err_entropy_grad"] = worst_entropy;
  j["max_rel_err_outer_grad"] = worst_outer;
  j["max_rel_err_inner_grad"] = worst_inner;
  bool pass = worst_entropy <= tol && worst_outer <= tol && worst_inner <= tol;
  j["pass"] = pass;
  std::cout << j.dump(2) << "\n";
  fs::create_directories(o.out_dir);
  std::ofstream out(fs::path(o.out_dir) / "gradcheck.json");
  out << j.dump(2) << "\n";
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fokker-Planck solver on normalizing-flow parameter space"};
  app.require_subcommand(1);
  app.set_version_flag("--version", run_io::kToolVersion);

  run_io::RunOptions opts;
  ListFlags lists;
  try {
    preload_config(argc, argv, opts);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App* c_solve = app.add_subcommand("solve", "nested-loop scheme solve");
  CLI::App* c_flat = app.add_subcommand("flat-solve", "flat gradient flow baseline");
  CLI::App* c_em = app.add_subcommand("baseline-em", "Euler-Maruyama particle baseline");
  CLI::App* c_exact = app.add_subcommand("exact-affine", "affine ODE vs exact OU solution");
  CLI::App* c_1d = app.add_subcommand("solve-1d", "1D forward Euler on the metric ODE");
  CLI::App* c_d1 = app.add_subcommand("diagnose-delta1", "projection residual diagnostic");
  CLI::App* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");

  for (CLI::App* sub : {c_solve, c_flat, c_em, c_exact, c_1d, c_d1, c_gc})
    add_common_flags(sub, opts, lists);
  c_em->add_option("--particles", opts.particles, "particle count");
  c_exact->add_option("--rk4-h,--rk4_h", opts.rk4_h, "RK4 step size");
  c_exact->add_option("--t-end,--t_end", opts.t_end, "integration horizon");
  for (CLI::App* sub : {c_1d, c_d1}) {
    sub->add_option("--quad-order,--quad_order", opts.quad_order, "Gauss-Hermite order");
    sub->add_option("--theta1", opts.theta1, "affine slope (> 0)");
    sub->add_option("--theta2", opts.theta2, "affine shift");
    sub->add_option("--family", opts.family, "affine | planar");
    sub->add_option("--flow-file,--flow_file", opts.flow_file, "planar flow parameter file");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (!lists.mu.empty()) opts.mu = parse_list_arg(lists.mu);
    if (!lists.sigma_diag.empty()) opts.sigma_diag = parse_list_arg(lists.sigma_diag);
    run_io::finalize(opts);
    if (c_solve->parsed()) {
      opts.subcommand = "solve";
      return run_solve(opts, false);
    }
    if (c_flat->parsed()) {
      opts.subcommand = "flat-solve";
      return run_solve(opts, true);
    }
    if (c_em->parsed()) {
      opts.subcommand = "baseline-em";
      return run_baseline_em(opts);
    }
    if (c_exact->parsed()) {
      opts.subcommand = "exact-affine";
      return run_exact_affine(opts);
    }
    if (c_1d->parsed()) {
      opts.subcommand = "solve-1d";
      return run_solve_1d(opts);
    }
    if (c_d1->parsed()) {
      opts.subcommand = "diagnose-delta1";
      return run_diagnose_delta1(opts);
    }
    if (c_gc->parsed()) {
      opts.subcommand = "gradcheck";
      return run_gradcheck(opts);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
