#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hyflux/hfr.hpp"

namespace hyflux {
namespace imex {

// Implicit/explicit Butcher pair in padded form: the implicit tableau gains a
// zero first row and column so both matrices share the (s+1)-stage shape and
// the abscissae satisfy c_ex = c_im with c[0] = 0. The implicit diagonal is
// constant from stage 1 on (SDIRK), which lets stage jacobians be reused.
struct ButcherPair {
  std::string name;
  int s = 0;      // implicit stage count; matrices are (s+1) x (s+1)
  int order = 0;  // design order of the pair
  Mat a_im, a_ex;
  Vec b_im, c_im, b_ex, c_ex;
  int stages() const { return s + 1; }
  double gamma() const { return a_im(1, 1); }  // repeated implicit diagonal
};

// Throws std::invalid_argument naming the violated property.
void validate_pair(const ButcherPair& p, double tol = 1e-12);

// Two-stage, second-order, L-stable pair; its implicit half is the classic
// SDIRK2 with diagonal 1 - sqrt(2)/2.
ButcherPair sdirk2_tableau();

// Text-format loader; validation errors cite line numbers.
ButcherPair load_tableau_pair(const std::string& path);

using Rhs = std::function<void(double t, const std::vector<double>& u,
                               std::vector<double>& dudt)>;

// One step of the explicit half of the pair applied to du/dt = rhs(t, u).
void explicit_rk_step(const ButcherPair& p, double t, double dt,
                      std::vector<double>& u, const Rhs& rhs);

struct StepOptions {
  hfr::NewtonOptions newton;
  // rebuild the stage jacobian on every k-th step; stages of one step always
  // share it (the SDIRK diagonal keeps a_dt fixed)
  int jacobian_period = 1;
  // false solves the stages monolithically without trace unknowns, the
  // baseline the condensed path is checked against
  bool hybridized = true;
  StepOptions() { newton.refresh = false; }
};

struct StepStats {
  bool converged = true;
  int newton_iters = 0;         // summed over implicit stages
  int gmres_iters = 0;
  double stage_residual = 0.0;  // worst final Newton norm
  double t_rex = 0.0;           // seconds in explicit residual evaluations
};

// Scratch state carried between steps: the trace vector warm-starts each
// stage solve and the cached jacobian persists across steps.
struct ImexWork {
  ButcherPair pair;
  std::vector<char> expl;  // mask selecting the explicit elements
  std::vector<int> imp;    // implicit elements, ascending
  hfr::StageJacobian jac;
  std::vector<double> uhat;
  std::vector<std::vector<double>> rbar, rim;
  std::vector<double> un, ustar;
  long step_count = 0;
};

ImexWork make_imex_work(const fr::Discretization& d,
                        const partition::Partition& part, ButcherPair pair);

// One coupled step of du/dt = R(u): explicit elements advance with the
// explicit tableau on the standard residual, implicit ones with the implicit
// tableau through the hybridized stage solves; every residual evaluation
// sees the full mesh state, which is how the regions couple. With no
// implicit elements the update is bit-identical to explicit_rk_step.
StepStats imex_step(const fr::Discretization& d,
                    const partition::Partition& part,
                    const hfr::TraceSpace& ts, double t, double dt,
                    const StepOptions& opt, ImexWork& w, double* u);

}  // namespace imex
}  // namespace hyflux
