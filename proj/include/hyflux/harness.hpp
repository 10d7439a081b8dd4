#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyflux/imex.hpp"

namespace hyflux {
namespace harness {

// exit-code carriers for the CLI: 2 / 3 / 4
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BcSpec {
  std::string tag;
  std::string kind;  // freestream | wall
  std::vector<double> state;
};

// Everything a run needs, read from a line-based `key = value` file with
// [section] headers. Unknown sections or keys are config errors.
struct RunConfig {
  // [mesh]
  std::string mesh_kind = "uniform";  // uniform | band | annulus | file
  int nx = 8, ny = 8;
  double lx = 1.0, ly = 1.0;
  int band_layers = 0;
  double band_ratio = 2.0;
  int n_theta = 16, n_r = 4;
  double r_inner = 0.5, r_outer = 2.0;
  std::string mesh_file;

  // [law]
  std::string law = "advection";  // advection | edac
  double ax = 1.0, ay = 1.0;
  double theta = 100.0, nu = 0.0;

  // [ic]
  std::string ic = "gaussian";  // gaussian | uniform | taylor_green
  double x0 = 10.0, y0 = 10.0, width = 20.0;
  std::vector<double> uniform_state;

  // [discretization]
  int p = 3;
  std::string scheme = "hfr";  // fr | hfr | efr

  // [time]
  std::string tableau = "imex32";  // data-dir name or an explicit path
  double dt = 0.01;
  double t_end = 1.0;

  // [partition]
  double cutoff = 0.0;  // elements with E_s <= cutoff go implicit

  // [solver]
  double newton_tol = 1e-10;
  int newton_max_iters = 30;
  double gmres_tol = 1e-8;
  int gmres_restart = 30;
  int jacobian_period = 1;

  // [filter]
  bool filter_on = false;
  double filter_alpha = 36.0;
  double filter_s = 16.0;
  double filter_eta = 0.0;
  double filter_tref = 1.0;

  // [bc]
  std::vector<BcSpec> bcs;

  // [output]
  std::string out_dir;  // empty disables all file output
  std::string prefix = "run";
  int fields_every = 0;  // VTK cadence in steps, 0 = none
  int log_every = 1;     // CSV series cadence in steps, 0 = none
};

RunConfig load_config(const std::string& path);
void validate_config(const RunConfig& c);
std::string resolve_tableau(const std::string& name);

// analytic field: fills the state at (x, y, t)
using Field = std::function<void(double x, double y, double t, double* v)>;

// A configured problem. The discretization stores pointers into the other
// members, so the struct must stay put once built.
struct Problem {
  mesh::Mesh m;
  basis::RefElement re;
  std::vector<mesh::ElemGeom> geo;
  fr::Discretization d;
  partition::Partition part;
  hfr::TraceSpace ts;
  imex::ButcherPair pair;
  Field ic;
  Field exact;  // null when no analytic solution applies

  Problem() = default;
  Problem(const Problem&) = delete;
  Problem& operator=(const Problem&) = delete;
};

void build_problem(const RunConfig& c, Problem& prob);

// Where the step loop spends its time; the phases are disjoint wall-clock
// intervals, so their sum stays below t_w.
struct TimingReport {
  double t_g = 0.0;    // global trace solves
  double t_l = 0.0;    // element-local solves
  double t_j = 0.0;    // jacobian assembly and condensation
  double t_rim = 0.0;  // implicit residuals and transmission defects
  double t_rex = 0.0;  // explicit residuals
  double t_w = 0.0;    // whole time loop
};

struct RunResult {
  std::vector<double> u;
  double t = 0.0;
  long steps = 0;
  TimingReport timing;
  std::vector<double> l2;  // per-variable error vs exact; empty without one
  int newton_iters = 0;
  int gmres_iters = 0;
};

// Advance the configured problem from its initial condition to t_end,
// writing series/field output per the config. Throws NumericalError when the
// state stops being finite or a stage solve fails to converge.
RunResult run(Problem& prob, const RunConfig& c);

// sqrt of the per-variable quadrature integral of (u - exact)^2
std::vector<double> l2_error(const fr::Discretization& d, const double* u,
                             const Field& exact, double t);
// root-sum-square over variables
double l2_error_total(const fr::Discretization& d, const double* u,
                      const Field& exact, double t);

double energy(const fr::Discretization& d, const double* u);
// EDAC diagnostics over the velocity components
double kinetic_energy(const fr::Discretization& d, const double* u);
double divergence_l2(const fr::Discretization& d, const double* u);

struct ConvergenceRow {
  double dt;
  double err;
  double order;  // NaN on the first row
};

// Errors against the analytic solution at t_end for each step size, coarse
// to fine, with observed orders between consecutive rows.
std::vector<ConvergenceRow> convergence_study(const RunConfig& base,
                                              const std::vector<double>& dts);

// Largest stable step in [dt_lo, dt_hi]: stability over the horizon means
// finite state, energy growth below 10x, and converged stage solves. The
// bracket shrinks geometrically to 5%; a stable upper bound acts as the cap.
double dtmax_bisection(const RunConfig& base, double dt_lo, double dt_hi,
                       double horizon);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

void write_csv(const Table& t, const std::string& path);
// Legacy ASCII VTK: solution-point lattice per element, p^2 sub-quads
// (vertices at p = 0), one scalar array per variable.
void write_fields(const fr::Discretization& d, const double* u,
                  const std::vector<std::string>& names,
                  const std::string& path);
void write_timing(const TimingReport& tr, const std::string& path);

}  // namespace harness
}  // namespace hyflux
