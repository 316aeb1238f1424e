#pragma once

#include <string>

#include "wassflow/common.hpp"
#include "wassflow/flow.hpp"
#include "wassflow/numkit.hpp"
#include "wassflow/potential.hpp"
#include "wassflow/psinet.hpp"
#include "wassflow/reference.hpp"
#include "wassflow/scheme.hpp"

namespace wassflow::run_io {

inline constexpr const char* kToolVersion = "wassflow 0.1.0";

// Everything a run depends on, resolvable from defaults, a config file and
// command-line flags (in that order of precedence).
struct RunOptions {
  std::string subcommand;
  std::string config_path;
  std::string out_dir = "out";

  scheme::SolverConfig solver;

  std::string potential_name = "quadratic";
  Vec mu;         // empty: zeros
  Vec sigma;      // row-major d*d; empty: identity
  Vec sigma_diag; // convenience; wins over identity, loses to full sigma
  double beta = 1.0;
  double st_scale = 3.0 / 50.0;
  double rosen_scale = 3.0 / 50.0;
  double rosen_curvature = 10.0;

  // subcommand extras
  int particles = 6000;    // baseline-em
  double rk4_h = 1e-4;     // exact-affine
  double t_end = 1.4;      // exact-affine horizon
  int quad_order = 100;    // 1D paths
  double theta1 = 1.0;     // 1D affine initial parameters
  double theta2 = 0.0;
  std::string family = "affine";  // solve-1d / diagnose-delta1
  std::string flow_file;          // planar 1D parameters on disk
  std::string plane;              // "i-j" density plane
  int density_grid = 64;
  std::string init_mode = "trainable";  // trainable | strict
  std::string optimizer = "adam";
  bool psi_warm_start = true;

  // set when the user pinned these, so finalize() leaves them alone
  bool k_in_explicit = false;
  bool k_out_explicit = false;
  bool eps_explicit = false;
};

// Flat "key = value" file; unknown keys are an error naming the key. A .json
// path is treated as a manifest replay and restores every recorded field.
void load_config_file(const std::string& path, RunOptions& opts);

// Push name-dependent defaults (batch sizes from dim, eps from alpha_out)
// for anything the user did not pin explicitly.
void finalize(RunOptions& opts);

potential::PotentialSpec build_potential(const RunOptions& opts);

std::string manifest_json(const RunOptions& opts);
void write_manifest(const RunOptions& opts);

void write_stats_json(const std::string& dir, const scheme::RunResult& result,
                      const RunOptions& opts, const potential::PotentialSpec& pot);

// Per-snapshot pushforward samples; regenerates the exact evaluation batches
// used inside solve (same eval stream), so CSV contents match stats.json.
void write_sample_outputs(const std::string& dir, const scheme::RunResult& result,
                          const RunOptions& opts);

struct EmSnapshot {
  double t = 0.0;
  int step = 0;
  numkit::SampleBatch samples;
};
void write_em_outputs(const std::string& dir, const std::vector<EmSnapshot>& snaps,
                      const RunOptions& opts, const potential::PotentialSpec& pot);

struct AffineRow {
  double t = 0.0;
  reference::AffineState state;
  double w2_to_exact = 0.0;
};
void write_affine_stats(const std::string& dir, const std::vector<AffineRow>& rows);

void write_samples_csv(const std::string& path, const numkit::SampleBatch& batch);
numkit::SampleBatch read_samples_csv(const std::string& path);

void write_density_csv(const std::string& path, const numkit::SampleBatch& batch, int ci,
                       int cj, int grid);

// Versioned text formats for parameters (layout documented in README).
void write_flow_params(const std::string& path, const flow::FlowParams& p);
flow::FlowParams read_flow_params(const std::string& path);
void write_psi_params(const std::string& path, const psinet::PsiParams& p);
psinet::PsiParams read_psi_params(const std::string& path);

void write_error_record(const std::string& dir, const std::string& message, int step, double t);

}  // namespace wassflow::run_io
