#include "wassflow/run_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wassflow/simd_kernels.hpp"

namespace wassflow::run_io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Vec parse_list(const std::string& s) {
  Vec out;
  std::string tok;
  std::stringstream ss(s);
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  std::size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

void apply_key(RunOptions& o, const std::string& key, const std::string& val) {
  auto& s = o.solver;
  try {
    if (key == "potential") o.potential_name = val;
    else if (key == "dim") s.dim = std::stoi(val);
    else if (key == "beta") o.beta = std::stod(val);
    else if (key == "dt") s.h = std::stod(val);
    else if (key == "steps") s.steps = std::stoi(val);
    else if (key == "flow_length") s.flow_length = std::stoi(val);
    else if (key == "m_out") s.m_out = std::stoi(val);
    else if (key == "m_in") s.m_in = std::stoi(val);
    else if (key == "k_out") { s.k_out = std::stoi(val); o.k_out_explicit = true; }
    else if (key == "k_in") { s.k_in = std::stoi(val); o.k_in_explicit = true; }
    else if (key == "lr_out") s.alpha_out = std::stod(val);
    else if (key == "lr_in") s.alpha_in = std::stod(val);
    else if (key == "eps_rescale") { s.eps_rescale = std::stod(val); o.eps_explicit = true; }
    else if (key == "seed") s.seed = std::stoull(val);
    else if (key == "snapshot_stride") s.snapshot_stride = std::stoi(val);
    else if (key == "eval_samples") s.eval_samples = std::stoi(val);
    else if (key == "psi_hidden") s.psi_hidden = std::stoi(val);
    else if (key == "psi_depth") s.psi_depth = std::stoi(val);
    else if (key == "psi_warm_start") o.psi_warm_start = (val == "1" || val == "true");
    else if (key == "optimizer") o.optimizer = val;
    else if (key == "init") o.init_mode = val;
    else if (key == "init_noise_std") s.init_noise_std = std::stod(val);
    else if (key == "mu") o.mu = parse_list(val);
    else if (key == "sigma") o.sigma = parse_list(val);
    else if (key == "sigma_diag") o.sigma_diag = parse_list(val);
    else if (key == "st_scale") o.st_scale = std::stod(val);
    else if (key == "rosen_scale") o.rosen_scale = std::stod(val);
    else if (key == "rosen_curvature") o.rosen_curvature = std::stod(val);
    else if (key == "particles") o.particles = std::stoi(val);
    else if (key == "rk4_h") o.rk4_h = std::stod(val);
    else if (key == "t_end") o.t_end = std::stod(val);
    else if (key == "quad_order") o.quad_order = std::stoi(val);
    else if (key == "theta1") o.theta1 = std::stod(val);
    else if (key == "theta2") o.theta2 = std::stod(val);
    else if (key == "family") o.family = val;
    else if (key == "flow_file") o.flow_file = val;
    else if (key == "plane") o.plane = val;
    else if (key == "density_grid") o.density_grid = std::stoi(val);
    else if (key == "out") o.out_dir = val;
    else throw Error("config: unknown key '" + key + "'");
  } catch (const std::invalid_argument&) {
    throw Error("config: invalid value for '" + key + "': '" + val + "'");
  } catch (const std::out_of_range&) {
    throw Error("config: value out of range for '" + key + "': '" + val + "'");
  }
}

void load_manifest_json(const std::string& path, RunOptions& o);

}  // namespace

void load_config_file(const std::string& path, RunOptions& opts) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot read '" + path + "'");
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    load_manifest_json(path, opts);
    return;
  }
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw Error("config: line " + std::to_string(lineno) + " is not 'key = value'");
    apply_key(opts, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void finalize(RunOptions& opts) {
  auto& s = opts.solver;
  if (!opts.k_in_explicit) s.k_in = scheme::SolverConfig::default_batch(s.dim);
  if (!opts.k_out_explicit) s.k_out = scheme::SolverConfig::default_batch(s.dim);
  if (!opts.eps_explicit) s.eps_rescale = s.alpha_out;
  s.psi_warm_start = opts.psi_warm_start;
  if (opts.init_mode == "strict")
    s.init = scheme::SolverConfig::Init::strict_identity;
  else if (opts.init_mode == "trainable")
    s.init = scheme::SolverConfig::Init::trainable_identity;
  else
    throw Error("config: invalid value for 'init': expected trainable or strict");
  if (opts.optimizer == "adam")
    s.optimizer = scheme::SolverConfig::Optimizer::adam;
  else if (opts.optimizer == "sgd")
    s.optimizer = scheme::SolverConfig::Optimizer::sgd;
  else
    throw Error("config: invalid value for 'optimizer': expected adam or sgd");
}

potential::PotentialSpec build_potential(const RunOptions& opts) {
  const int d = opts.solver.dim;
  if (opts.potential_name == "quadratic") {
    Vec mu = opts.mu;
    if (mu.empty()) mu.assign(d, 0.0);
    if (static_cast<int>(mu.size()) != d) throw Error("config: mu has wrong dimension");
    numkit::SmallSymMatrix sigma;
    if (!opts.sigma.empty()) {
      if (opts.sigma.size() != static_cast<std::size_t>(d) * d)
        throw Error("config: sigma must have dim*dim entries");
      sigma = numkit::SmallSymMatrix(d);
      sigma.raw() = opts.sigma;
      sigma.symmetrize();
    } else if (!opts.sigma_diag.empty()) {
      if (static_cast<int>(opts.sigma_diag.size()) != d)
        throw Error("config: sigma_diag has wrong dimension");
      sigma = numkit::SmallSymMatrix::diag(opts.sigma_diag);
    } else {
      sigma = numkit::SmallSymMatrix::identity(d);
    }
    return potential::PotentialSpec::quadratic(std::move(mu), std::move(sigma), opts.beta);
  }
  if (opts.potential_name == "styblinski_tang")
    return potential::PotentialSpec::styblinski_tang(d, opts.beta, opts.st_scale);
  if (opts.potential_name == "rosenbrock")
    return potential::PotentialSpec::rosenbrock(d, opts.beta, opts.rosen_scale,
                                                opts.rosen_curvature);
  throw Error("config: unknown potential '" + opts.potential_name +
              "' (expected quadratic | styblinski_tang | rosenbrock)");
}

namespace {

json options_to_json(const RunOptions& o) {
  const auto& s = o.solver;
  json j;
  j["tool_version"] = kToolVersion;
  j["subcommand"] = o.subcommand;
  j["config_path"] = o.config_path;
  j["out"] = o.out_dir;
  j["kernel_backend"] = kern::active().name;
  j["threads"] = max_threads();
  j["solver"] = {
      {"dim", s.dim},
      {"dt", s.h},
      {"steps", s.steps},
      {"m_out", s.m_out},
      {"m_in", s.m_in},
      {"k_out", s.k_out},
      {"k_in", s.k_in},
      {"lr_out", s.alpha_out},
      {"lr_in", s.alpha_in},
      {"eps_rescale", s.eps_rescale},
      {"seed", s.seed},
      {"snapshot_stride", s.snapshot_stride},
      {"eval_samples", s.eval_samples},
      {"flow_length", s.flow_length},
      {"psi_hidden", s.psi_hidden},
      {"psi_depth", s.psi_depth},
      {"psi_warm_start", s.psi_warm_start},
      {"init", o.init_mode},
      {"init_noise_std", s.init_noise_std},
      {"optimizer", o.optimizer},
  };
  j["potential"] = {
      {"name", o.potential_name}, {"beta", o.beta},           {"mu", o.mu},
      {"sigma", o.sigma},         {"sigma_diag", o.sigma_diag},
      {"st_scale", o.st_scale},   {"rosen_scale", o.rosen_scale},
      {"rosen_curvature", o.rosen_curvature},
  };
  j["extras"] = {
      {"particles", o.particles}, {"rk4_h", o.rk4_h},     {"t_end", o.t_end},
      {"quad_order", o.quad_order}, {"theta1", o.theta1}, {"theta2", o.theta2},
      {"family", o.family},       {"flow_file", o.flow_file}, {"plane", o.plane},
      {"density_grid", o.density_grid},
  };
  return j;
}

void load_manifest_json(const std::string& path, RunOptions& o) {
  std::ifstream in(path);
  json j = json::parse(in);
  o.out_dir = j.at("out");
  auto& s = o.solver;
  const json& sv = j.at("solver");
  s.dim = sv.at("dim");
  s.h = sv.at("dt");
  s.steps = sv.at("steps");
  s.m_out = sv.at("m_out");
  s.m_in = sv.at("m_in");
  s.k_out = sv.at("k_out");
  s.k_in = sv.at("k_in");
  s.alpha_out = sv.at("lr_out");
  s.alpha_in = sv.at("lr_in");
  s.eps_rescale = sv.at("eps_rescale");
  s.seed = sv.at("seed");
  s.snapshot_stride = sv.at("snapshot_stride");
  s.eval_samples = sv.at("eval_samples");
  s.flow_length = sv.at("flow_length");
  s.psi_hidden = sv.at("psi_hidden");
  s.psi_depth = sv.at("psi_depth");
  o.psi_warm_start = sv.at("psi_warm_start");
  o.init_mode = sv.at("init");
  s.init_noise_std = sv.at("init_noise_std");
  o.optimizer = sv.at("optimizer");
  const json& pv = j.at("potential");
  o.potential_name = pv.at("name");
  o.beta = pv.at("beta");
  o.mu = pv.at("mu").get<Vec>();
  o.sigma = pv.at("sigma").get<Vec>();
  o.sigma_diag = pv.at("sigma_diag").get<Vec>();
  o.st_scale = pv.at("st_scale");
  o.rosen_scale = pv.at("rosen_scale");
  o.rosen_curvature = pv.at("rosen_curvature");
  const json& ev = j.at("extras");
  o.particles = ev.at("particles");
  o.rk4_h = ev.at("rk4_h");
  o.t_end = ev.at("t_end");
  o.quad_order = ev.at("quad_order");
  o.theta1 = ev.at("theta1");
  o.theta2 = ev.at("theta2");
  o.family = ev.at("family");
  o.flow_file = ev.at("flow_file");
  o.plane = ev.at("plane");
  o.density_grid = ev.at("density_grid");
  // manifests store fully resolved values
  o.k_in_explicit = o.k_out_explicit = o.eps_explicit = true;
}

json gaussian_ref_entry(const potential::PotentialSpec& pot, const RunOptions& opts,
                        const Vec& mean, const numkit::SmallSymMatrix& cov, double t) {
  // exact OU marginal from the standard-Gaussian initial condition
  reference::GaussianState init;
  init.mean.assign(pot.dim, 0.0);
  init.cov = numkit::SmallSymMatrix::identity(pot.dim);
  reference::GaussianState ex = reference::ou_exact(pot, opts.beta, init, t);
  double me = 0.0;
  for (int i = 0; i < pot.dim; ++i) {
    double d = mean[i] - ex.mean[i];
    me += d * d;
  }
  double ce = 0.0;
  for (int i = 0; i < pot.dim; ++i)
    for (int j = 0; j < pot.dim; ++j) {
      double d = cov.at(i, j) - ex.cov.at(i, j);
      ce += d * d;
    }
  reference::GaussianState emp{mean, cov};
  json r;
  r["ref_mean_err"] = std::sqrt(me);
  r["ref_cov_err"] = std::sqrt(ce);
  r["gaussian_w2_to_exact"] = reference::gaussian_w2(emp, ex);
  return r;
}

}  // namespace

std::string manifest_json(const RunOptions& opts) { return options_to_json(opts).dump(2); }

void write_manifest(const RunOptions& opts) {
  fs::create_directories(opts.out_dir);
  std::ofstream out(fs::path(opts.out_dir) / "manifest.json");
  out << manifest_json(opts) << "\n";
}

void write_stats_json(const std::string& dir, const scheme::RunResult& result,
                      const RunOptions& opts, const potential::PotentialSpec& pot) {
  json arr = json::array();
  for (const auto& s : result.snapshots) {
    json e;
    e["t"] = s.t;
    e["mean"] = s.mean;
    std::vector<Vec> cov(pot.dim, Vec(pot.dim));
    for (int i = 0; i < pot.dim; ++i)
      for (int j = 0; j < pot.dim; ++j) cov[i][j] = s.cov.at(i, j);
    e["cov"] = cov;
    e["entropy"] = s.entropy;
    e["entropy_stderr"] = s.entropy_stderr;
    if (pot.kind == potential::Kind::quadratic)
      e.update(gaussian_ref_entry(pot, opts, s.mean, s.cov, s.t));
    arr.push_back(std::move(e));
  }
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "stats.json");
  out << arr.dump(2) << "\n";
}

void write_samples_csv(const std::string& path, const numkit::SampleBatch& batch) {
  std::ofstream out(path);
  for (int i = 0; i < batch.dim; ++i) out << (i ? "," : "") << "x" << i;
  out << "\n";
  for (int k = 0; k < batch.count; ++k) {
    const double* r = batch.row(k);
    for (int i = 0; i < batch.dim; ++i) out << (i ? "," : "") << fmt17(r[i]);
    out << "\n";
  }
}

numkit::SampleBatch read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read samples file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error("empty samples file");
  int dim = 1 + static_cast<int>(std::count(line.begin(), line.end(), ','));
  numkit::SampleBatch b;
  b.dim = dim;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) b.data.push_back(std::stod(tok));
  }
  b.count = static_cast<int>(b.data.size()) / dim;
  return b;
}

void write_density_csv(const std::string& path, const numkit::SampleBatch& batch, int ci,
                       int cj, int grid) {
  if (ci < 0 || cj < 0 || ci >= batch.dim || cj >= batch.dim || ci == cj)
    throw Error("density plane indices out of range");
  const int K = batch.count;
  Vec xs(K), ys(K);
  for (int k = 0; k < K; ++k) {
    xs[k] = batch.row(k)[ci];
    ys[k] = batch.row(k)[cj];
  }
  auto stddev = [&](const Vec& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= v.size();
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / (v.size() - 1));
  };
  // Silverman rule in two dimensions: (4/(d+2))^{1/(d+4)} = 1 for d = 2
  double bx = stddev(xs) * std::pow(K, -1.0 / 6.0);
  double by = stddev(ys) * std::pow(K, -1.0 / 6.0);
  double xmin = *std::min_element(xs.begin(), xs.end()) - 3 * bx;
  double xmax = *std::max_element(xs.begin(), xs.end()) + 3 * bx;
  double ymin = *std::min_element(ys.begin(), ys.end()) - 3 * by;
  double ymax = *std::max_element(ys.begin(), ys.end()) + 3 * by;

  std::ofstream out(path);
  out << "# plane " << ci << "-" << cj << "\n";
  out << "# bounds " << fmt17(xmin) << " " << fmt17(xmax) << " " << fmt17(ymin) << " "
      << fmt17(ymax) << "\n";
  out << "# bandwidth " << fmt17(bx) << " " << fmt17(by) << "\n";
  out << "# grid " << grid << " " << grid << "\n";
  const double norm = 1.0 / (2.0 * M_PI * bx * by * K);
  for (int gy = 0; gy < grid; ++gy) {
    double y = ymin + (ymax - ymin) * gy / (grid - 1);
    for (int gx = 0; gx < grid; ++gx) {
      double x = xmin + (xmax - xmin) * gx / (grid - 1);
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        double dx = (x - xs[k]) / bx, dy = (y - ys[k]) / by;
        acc += std::exp(-0.5 * (dx * dx + dy * dy));
      }
      out << (gx ? "," : "") << fmt17(acc * norm);
    }
    out << "\n";
  }
}

void write_sample_outputs(const std::string& dir, const scheme::RunResult& result,
                          const RunOptions& opts) {
  fs::create_directories(dir);
  const auto& s = opts.solver;
  numkit::Rng eval_rng = numkit::Rng::stream(s.seed, 1);
  int plane_i = -1, plane_j = -1;
  if (!opts.plane.empty()) {
    std::size_t dash = opts.plane.find('-');
    if (dash == std::string::npos) throw Error("plane must look like 'i-j'");
    plane_i = std::stoi(opts.plane.substr(0, dash));
    plane_j = std::stoi(opts.plane.substr(dash + 1));
  }
  for (const auto& snap : result.snapshots) {
    numkit::SampleBatch ref = numkit::sample_std_gaussian(eval_rng, s.dim, s.eval_samples);
    numkit::SampleBatch push = flow::flow_push(snap.theta, ref);
    int step = static_cast<int>(std::lround(snap.t / s.h));
    std::string base = (fs::path(dir) / ("samples_t" + std::to_string(step) + ".csv")).string();
    write_samples_csv(base, push);
    if (plane_i >= 0)
      write_density_csv((fs::path(dir) / ("density_t" + std::to_string(step) + "_p" +
                                          std::to_string(plane_i) + "-" +
                                          std::to_string(plane_j) + ".csv"))
                            .string(),
                        push, plane_i, plane_j, opts.density_grid);
  }
}

void write_em_outputs(const std::string& dir, const std::vector<EmSnapshot>& snaps,
                      const RunOptions& opts, const potential::PotentialSpec& pot) {
  fs::create_directories(dir);
  json arr = json::array();
  for (const auto& s : snaps) {
    write_samples_csv((fs::path(dir) / ("samples_t" + std::to_string(s.step) + ".csv")).string(),
                      s.samples);
    auto mc = numkit::empirical_mean_cov(s.samples);
    json e;
    e["t"] = s.t;
    e["mean"] = mc.first;
    std::vector<Vec> cov(pot.dim, Vec(pot.dim));
    for (int i = 0; i < pot.dim; ++i)
      for (int j = 0; j < pot.dim; ++j) cov[i][j] = mc.second.at(i, j);
    e["cov"] = cov;
    if (pot.kind == potential::Kind::quadratic)
      e.update(gaussian_ref_entry(pot, opts, mc.first, mc.second, s.t));
    arr.push_back(std::move(e));
  }
  std::ofstream out(fs::path(dir) / "stats.json");
  out << arr.dump(2) << "\n";
}

void write_affine_stats(const std::string& dir, const std::vector<AffineRow>& rows) {
  fs::create_directories(dir);
  json arr = json::array();
  for (const auto& r : rows) {
    json e;
    e["t"] = r.t;
    e["b"] = r.state.b;
    std::vector<Vec> g(r.state.dim, Vec(r.state.dim));
    for (int i = 0; i < r.state.dim; ++i)
      for (int j = 0; j < r.state.dim; ++j)
        g[i][j] = r.state.gamma[static_cast<std::size_t>(i) * r.state.dim + j];
    e["gamma"] = g;
    e["gaussian_w2_to_exact"] = r.w2_to_exact;
    arr.push_back(std::move(e));
  }
  std::ofstream out(fs::path(dir) / "affine_stats.json");
  out << arr.dump(2) << "\n";
}

void write_flow_params(const std::string& path, const flow::FlowParams& p) {
  std::ofstream out(path);
  out << "wassflow-flow v1\n";
  out << p.dim << " " << p.layers.size() << "\n";
  for (const auto& l : p.layers) {
    for (int i = 0; i < p.dim; ++i) out << (i ? " " : "") << fmt17(l.w[i]);
    out << "\n";
    for (int i = 0; i < p.dim; ++i) out << (i ? " " : "") << fmt17(l.u_raw[i]);
    out << "\n";
    out << fmt17(l.b) << "\n";
  }
}

flow::FlowParams read_flow_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read flow file '" + path + "'");
  std::string header;
  std::getline(in, header);
  if (trim(header) != "wassflow-flow v1") throw Error("unrecognized flow file header");
  int dim = 0;
  std::size_t layers = 0;
  in >> dim >> layers;
  flow::FlowParams p;
  p.dim = dim;
  p.layers.resize(layers);
  for (auto& l : p.layers) {
    l.w.resize(dim);
    l.u_raw.resize(dim);
    for (int i = 0; i < dim; ++i) in >> l.w[i];
    for (int i = 0; i < dim; ++i) in >> l.u_raw[i];
    in >> l.b;
  }
  if (!in) throw Error("truncated flow file '" + path + "'");
  return p;
}

void write_psi_params(const std::string& path, const psinet::PsiParams& p) {
  std::ofstream out(path);
  out << "wassflow-psi v1\n";
  out << p.widths.size() << "\n";
  for (std::size_t i = 0; i < p.widths.size(); ++i) out << (i ? " " : "") << p.widths[i];
  out << "\n";
  for (const auto& l : p.layers) {
    for (std::size_t i = 0; i < l.W.size(); ++i) out << (i ? " " : "") << fmt17(l.W[i]);
    out << "\n";
    for (std::size_t i = 0; i < l.b.size(); ++i) out << (i ? " " : "") << fmt17(l.b[i]);
    out << "\n";
  }
}

psinet::PsiParams read_psi_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read psi file '" + path + "'");
  std::string header;
  std::getline(in, header);
  if (trim(header) != "wassflow-psi v1") throw Error("unrecognized psi file header");
  std::size_t nw = 0;
  in >> nw;
  std::vector<int> widths(nw);
  for (auto& w : widths) in >> w;
  psinet::PsiParams p = psinet::PsiParams::zeros(widths);
  for (auto& l : p.layers) {
    for (auto& v : l.W) in >> v;
    for (auto& v : l.b) in >> v;
  }
  if (!in) throw Error("truncated psi file '" + path + "'");
  return p;
}

void write_error_record(const std::string& dir, const std::string& message, int step, double t) {
  fs::create_directories(dir);
  json e;
  e["error"] = message;
  e["step"] = step;
  e["t"] = t;
  std::ofstream out(fs::path(dir) / "error.json");
  out << e.dump(2) << "\n";
}

}  // namespace wassflow::run_io
