#include "hyflux/imex.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hyflux {
namespace imex {

void validate_pair(const ButcherPair& p, double tol) {
  int n = p.stages();
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("tableau '" + p.name + "': " + what);
  };
  if (p.s < 1) fail("needs at least one implicit stage");
  if (p.a_im.rows() != n || p.a_im.cols() != n || p.a_ex.rows() != n ||
      p.a_ex.cols() != n || p.b_im.size() != n || p.b_ex.size() != n ||
      p.c_im.size() != n || p.c_ex.size() != n)
    fail("inconsistent dimensions");

  for (int j = 0; j < n; ++j)
    if (p.a_im(0, j) != 0.0 || p.a_im(j, 0) != 0.0)
      fail("implicit matrix lacks the zero first row/column padding");
  if (p.b_im[0] != 0.0) fail("implicit weights must start with 0");
  if (p.c_im[0] != 0.0) fail("abscissae must start with 0");
  for (int i = 0; i < n; ++i)
    if (std::abs(p.c_ex[i] - p.c_im[i]) > tol)
      fail("explicit abscissae differ from the implicit ones");

  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (p.a_im(i, j) != 0.0) fail("implicit matrix not lower triangular");
      if (p.a_ex(i, j) != 0.0) fail("explicit matrix not strictly lower triangular");
    }
  for (int i = 0; i < n; ++i)
    if (p.a_ex(i, i) != 0.0) fail("explicit matrix has a nonzero diagonal");
  for (int i = 1; i < n; ++i)
    if (std::abs(p.a_im(i, i) - p.a_im(1, 1)) > tol)
      fail("implicit diagonal is not constant");
  if (p.a_im(1, 1) <= 0.0) fail("implicit diagonal must be positive");

  for (int i = 0; i < n; ++i) {
    if (std::abs(p.a_im.row(i).sum() - p.c_im[i]) > tol)
      fail("implicit row sums do not match the abscissae");
    if (std::abs(p.a_ex.row(i).sum() - p.c_ex[i]) > tol)
      fail("explicit row sums do not match the abscissae");
  }
  if (std::abs(p.b_im.sum() - 1.0) > tol) fail("implicit weights do not sum to 1");
  if (std::abs(p.b_ex.sum() - 1.0) > tol) fail("explicit weights do not sum to 1");
}

ButcherPair sdirk2_tableau() {
  double g = 1.0 - std::sqrt(2.0) / 2.0;      // implicit diagonal
  double d = -2.0 * std::sqrt(2.0) / 3.0;
  ButcherPair p;
  p.name = "sdirk2";
  p.s = 2;
  p.order = 2;
  p.a_im = Mat::Zero(3, 3);
  p.a_im(1, 1) = g;
  p.a_im(2, 1) = 1.0 - g;
  p.a_im(2, 2) = g;
  p.b_im = Vec::Zero(3);
  p.b_im << 0.0, 1.0 - g, g;
  p.c_im = Vec::Zero(3);
  p.c_im << 0.0, g, 1.0;
  p.a_ex = Mat::Zero(3, 3);
  p.a_ex(1, 0) = g;
  p.a_ex(2, 0) = d;
  p.a_ex(2, 1) = 1.0 - d;
  p.b_ex = p.b_im;
  p.c_ex = p.c_im;
  validate_pair(p);
  return p;
}

namespace {

std::vector<double> parse_row(const std::string& line, int lineno) {
  std::istringstream ss(line);
  std::vector<double> out;
  double v;
  while (ss >> v) out.push_back(v);
  if (!ss.eof())
    throw std::invalid_argument("tableau line " + std::to_string(lineno) +
                                ": not a number row");
  return out;
}

}  // namespace

ButcherPair load_tableau_pair(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_tableau_pair: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);

  size_t k = 0;
  auto next = [&]() -> const std::string& {
    while (k < lines.size() && lines[k].empty()) ++k;
    if (k >= lines.size())
      throw std::invalid_argument("tableau " + path + ": truncated at line " +
                                  std::to_string(k + 1));
    return lines[k++];
  };
  auto expect = [&](const std::string& what) {
    const std::string& l = next();
    if (l != what)
      throw std::invalid_argument("tableau " + path + " line " +
                                  std::to_string(k) + ": expected '" + what +
                                  "', got '" + l + "'");
  };

  expect("imex-pair v1");
  ButcherPair p;
  {
    std::istringstream ss(next());
    std::string kw;
    ss >> kw >> p.name;
    if (kw != "name" || p.name.empty())
      throw std::invalid_argument("tableau " + path + " line " +
                                  std::to_string(k) + ": expected 'name <id>'");
  }
  {
    std::istringstream ss(next());
    std::string ks, kq;
    ss >> ks >> p.s >> kq >> p.order;
    if (ks != "s" || kq != "q" || !ss || p.s < 1)
      throw std::invalid_argument("tableau " + path + " line " +
                                  std::to_string(k) +
                                  ": expected 's <stages> q <order>'");
  }
  int n = p.stages();
  auto read_matrix = [&](Mat& m) {
    m.resize(n, n);
    for (int i = 0; i < n; ++i) {
      auto row = parse_row(next(), static_cast<int>(k));
      if (static_cast<int>(row.size()) != n)
        throw std::invalid_argument("tableau " + path + " line " +
                                    std::to_string(k) + ": expected " +
                                    std::to_string(n) + " entries");
      for (int j = 0; j < n; ++j) m(i, j) = row[j];
    }
  };
  auto read_vector = [&](Vec& v) {
    auto row = parse_row(next(), static_cast<int>(k));
    if (static_cast<int>(row.size()) != n)
      throw std::invalid_argument("tableau " + path + " line " +
                                  std::to_string(k) + ": expected " +
                                  std::to_string(n) + " entries");
    v.resize(n);
    for (int j = 0; j < n; ++j) v[j] = row[j];
  };

  expect("implicit");
  read_matrix(p.a_im);
  expect("b");
  read_vector(p.b_im);
  expect("c");
  read_vector(p.c_im);
  expect("explicit");
  read_matrix(p.a_ex);
  expect("bbar");
  read_vector(p.b_ex);
  expect("cbar");
  read_vector(p.c_ex);
  validate_pair(p);
  return p;
}

void explicit_rk_step(const ButcherPair& p, double t, double dt,
                      std::vector<double>& u, const Rhs& rhs) {
  int n = p.stages();
  size_t dim = u.size();
  std::vector<std::vector<double>> kst(n, std::vector<double>(dim));
  std::vector<double> stage(dim);
  for (int i = 0; i < n; ++i) {
    stage = u;
    for (int j = 0; j < i; ++j) {
      double a = p.a_ex(i, j);
      if (a == 0.0) continue;
      for (size_t d = 0; d < dim; ++d) stage[d] += dt * a * kst[j][d];
    }
    rhs(t + p.c_ex[i] * dt, stage, kst[i]);
  }
  for (int i = 0; i < n; ++i) {
    double b = p.b_ex[i];
    if (b == 0.0) continue;
    for (size_t d = 0; d < dim; ++d) u[d] += dt * b * kst[i][d];
  }
}

ImexWork make_imex_work(const fr::Discretization& d,
                        const partition::Partition& part, ButcherPair pair) {
  ImexWork w;
  w.pair = std::move(pair);
  w.expl.resize(part.implicit.size());
  for (size_t e = 0; e < w.expl.size(); ++e) {
    w.expl[e] = !part.implicit[e];
    if (part.implicit[e]) w.imp.push_back(static_cast<int>(e));
  }
  int n = w.pair.stages();
  w.rbar.resize(n);
  w.rim.resize(n);
  w.un.resize(d.dof());
  w.ustar.resize(d.dof());
  return w;
}

StepStats imex_step(const fr::Discretization& d,
                    const partition::Partition& part,
                    const hfr::TraceSpace& ts, double t, double dt,
                    const StepOptions& opt, ImexWork& w, double* u) {
  const ButcherPair& p = w.pair;
  int n = p.stages();
  int nl = d.nv() * d.ns();
  int ne = d.msh->n_elems();
  bool any_ex = part.n_implicit < ne;
  bool any_im = part.n_implicit > 0;
  double g_dt = p.gamma() * dt;

  StepStats st;
  w.un.assign(u, u + d.dof());
  std::copy(w.un.begin(), w.un.end(), w.ustar.begin());
  if (any_im && opt.jacobian_period > 0 &&
      w.step_count % opt.jacobian_period == 0)
    w.jac.ready = false;
  ++w.step_count;

  auto eval_rbar = [&](int i, double ti) {
    if (!any_ex) return;
    w.rbar[i].resize(w.un.size());
    auto t0 = std::chrono::steady_clock::now();
    fr::fr_residual(d, u, ti, &w.expl, w.rbar[i].data());
    st.t_rex += std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  };
  eval_rbar(0, t);

  for (int i = 1; i < n; ++i) {
    double ti = t + p.c_im[i] * dt;
    if (any_ex) {
      // mirrors explicit_rk_step's stage accumulation term for term
      for (int e = 0; e < ne; ++e) {
        if (part.implicit[e]) continue;
        double* ue = d.elem(u, e);
        const double* u0 = d.elem(w.un.data(), e);
        for (int l = 0; l < nl; ++l) ue[l] = u0[l];
        for (int j = 0; j < i; ++j) {
          double a = p.a_ex(i, j);
          if (a == 0.0) continue;
          const double* rj = d.elem(w.rbar[j].data(), e);
          for (int l = 0; l < nl; ++l) ue[l] += dt * a * rj[l];
        }
      }
    }
    if (any_im) {
      for (int e : w.imp) {
        double* se = d.elem(w.ustar.data(), e);
        double* ue = d.elem(u, e);
        const double* u0 = d.elem(w.un.data(), e);
        for (int l = 0; l < nl; ++l) se[l] = u0[l];
        for (int j = 1; j < i; ++j) {
          double a = p.a_im(i, j);
          if (a == 0.0) continue;
          const double* rj = d.elem(w.rim[j].data(), e);
          for (int l = 0; l < nl; ++l) se[l] += dt * a * rj[l];
        }
        for (int l = 0; l < nl; ++l) ue[l] = se[l];
      }
      hfr::NewtonReport rep;
      rep.converged = true;
      if (w.imp.empty()) {
        // nothing to solve; the predictor already wrote the stage state
      } else if (opt.hybridized) {
        if (w.uhat.size() != static_cast<size_t>(ts.dof(d.nv()))) {
          w.uhat.assign(ts.dof(d.nv()), 0.0);
          hfr::init_trace(d, ts, u, w.uhat.data());
        }
        rep = hfr::solve_stage(d, ts, w.ustar.data(), g_dt, ti, opt.newton,
                               w.jac, u, w.uhat.data());
      } else {
        rep = hfr::solve_stage_unhybridized(d, part, w.ustar.data(), g_dt, ti,
                                            opt.newton, u);
      }
      st.converged = st.converged && rep.converged;
      st.newton_iters += rep.iters;
      st.gmres_iters += rep.gmres_iters;
      st.stage_residual = std::max(st.stage_residual, rep.residual);
      // recover the stage derivative from the update identity so the final
      // combination telescopes exactly
      w.rim[i].resize(w.un.size());
      for (int e : w.imp) {
        const double* ue = d.elem(u, e);
        const double* se = d.elem(w.ustar.data(), e);
        double* re = d.elem(w.rim[i].data(), e);
        for (int l = 0; l < nl; ++l) re[l] = (ue[l] - se[l]) / g_dt;
      }
    }
    if (i < n - 1 || p.b_ex[i] != 0.0) eval_rbar(i, ti);
  }

  for (int e = 0; e < ne; ++e) {
    double* ue = d.elem(u, e);
    const double* u0 = d.elem(w.un.data(), e);
    for (int l = 0; l < nl; ++l) ue[l] = u0[l];
    if (part.implicit[e]) {
      for (int j = 1; j < n; ++j) {
        double b = p.b_im[j];
        if (b == 0.0) continue;
        const double* rj = d.elem(w.rim[j].data(), e);
        for (int l = 0; l < nl; ++l) ue[l] += dt * b * rj[l];
      }
    } else {
      for (int j = 0; j < n; ++j) {
        double b = p.b_ex[j];
        if (b == 0.0) continue;
        const double* rj = d.elem(w.rbar[j].data(), e);
        for (int l = 0; l < nl; ++l) ue[l] += dt * b * rj[l];
      }
    }
  }
  return st;
}

}  // namespace imex
}  // namespace hyflux
