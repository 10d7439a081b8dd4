#include "hyflux/physics.hpp"

#include <algorithm>
#include <cstring>

namespace hyflux {
namespace physics {

Physics Physics::advection(double ax, double ay) {
  Physics p;
  p.type = Type::Advection;
  p.n_vars = 1;
  p.ax = ax;
  p.ay = ay;
  return p;
}

Physics Physics::edac(double theta, double nu) {
  Physics p;
  p.type = Type::Edac;
  p.n_vars = 3;
  p.theta = theta;
  p.nu = nu;
  return p;
}

void Physics::flux(const double* u, double* fx, double* fy) const {
  if (type == Type::Advection) {
    fx[0] = ax * u[0];
    fy[0] = ay * u[0];
    return;
  }
  double P = u[0], vx = u[1], vy = u[2];
  fx[0] = vx * (P + theta);
  fx[1] = vx * vx + P;
  fx[2] = vx * vy;
  fy[0] = vy * (P + theta);
  fy[1] = vx * vy;
  fy[2] = vy * vy + P;
}

void Physics::flux_jac(const double* u, double* dfx, double* dfy) const {
  if (type == Type::Advection) {
    dfx[0] = ax;
    dfy[0] = ay;
    return;
  }
  double P = u[0], vx = u[1], vy = u[2];
  const double jx[9] = {vx, P + theta, 0, 1, 2 * vx, 0, 0, vy, vx};
  const double jy[9] = {vy, 0, P + theta, 0, vy, vx, 1, 0, 2 * vy};
  std::memcpy(dfx, jx, sizeof jx);
  std::memcpy(dfy, jy, sizeof jy);
}

double Physics::wavespeed(const double* u, double nx, double ny) const {
  if (type == Type::Advection) return std::abs(ax * nx + ay * ny);
  double q = u[1] * nx + u[2] * ny;
  return 1.5 * std::abs(q) + std::sqrt(0.25 * q * q + u[0] + theta);
}

void Physics::wavespeed_grad(const double* u, double nx, double ny,
                             double* g) const {
  if (type == Type::Advection) {
    g[0] = 0.0;
    return;
  }
  double q = u[1] * nx + u[2] * ny;
  double d = std::sqrt(0.25 * q * q + u[0] + theta);
  double dq = 1.5 * (q > 0 ? 1.0 : (q < 0 ? -1.0 : 0.0)) + 0.25 * q / d;
  g[0] = 0.5 / d;
  g[1] = dq * nx;
  g[2] = dq * ny;
}

double Physics::stab(const double* uhat, double nx, double ny) const {
  if (type == Type::Advection) {
    // floor keeps the transmission condition solvable on flow-aligned faces
    return std::max(std::abs(ax * nx + ay * ny),
                    1e-10 * std::hypot(ax, ay));
  }
  double v = std::hypot(uhat[1], uhat[2]);
  return 1.5 * v + std::sqrt(0.25 * v * v + uhat[0] + theta);
}

void Physics::stab_grad(const double* uhat, double nx, double ny,
                        double* g) const {
  if (type == Type::Advection) {
    g[0] = 0.0;
    return;
  }
  (void)nx;
  (void)ny;
  double v = std::hypot(uhat[1], uhat[2]);
  double d = std::sqrt(0.25 * v * v + uhat[0] + theta);
  g[0] = 0.5 / d;
  double dv = 1.5 + 0.25 * v / d;  // ds/d|v|
  if (v > 0.0) {
    g[1] = dv * uhat[1] / v;
    g[2] = dv * uhat[2] / v;
  } else {
    g[1] = g[2] = 0.0;
  }
}

void Physics::viscous_flux(const double* ux, const double* uy, double* fvx,
                           double* fvy) const {
  for (int i = 0; i < n_vars; ++i) {
    fvx[i] = nu * ux[i];
    fvy[i] = nu * uy[i];
  }
}

void rusanov(const Physics& ph, const double* um, const double* up, double nx,
             double ny, double* fhat) {
  int nv = ph.n_vars;
  double fxm[kMaxVars], fym[kMaxVars], fxp[kMaxVars], fyp[kMaxVars];
  ph.flux(um, fxm, fym);
  ph.flux(up, fxp, fyp);
  double lam = std::max(ph.wavespeed(um, nx, ny), ph.wavespeed(up, nx, ny));
  for (int i = 0; i < nv; ++i)
    fhat[i] = 0.5 * (nx * (fxm[i] + fxp[i]) + ny * (fym[i] + fyp[i])) -
              0.5 * lam * (up[i] - um[i]);
}

void hybrid_flux(const Physics& ph, const double* uhat, const double* u,
                 double nx, double ny, double* fhat) {
  int nv = ph.n_vars;
  double fx[kMaxVars], fy[kMaxVars];
  ph.flux(uhat, fx, fy);
  double s = ph.stab(uhat, nx, ny);
  for (int i = 0; i < nv; ++i)
    fhat[i] = nx * fx[i] + ny * fy[i] + s * (u[i] - uhat[i]);
}

void hybrid_flux_jac(const Physics& ph, const double* uhat, const double* u,
                     double nx, double ny, double* du, double* duhat) {
  int nv = ph.n_vars;
  double ax[kMaxVars * kMaxVars], ay[kMaxVars * kMaxVars];
  double gs[kMaxVars] = {0, 0, 0};
  double s = ph.stab(uhat, nx, ny);
  ph.stab_grad(uhat, nx, ny, gs);
  ph.flux_jac(uhat, ax, ay);
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < nv; ++j) {
      du[i * nv + j] = i == j ? s : 0.0;
      double v = nx * ax[i * nv + j] + ny * ay[i * nv + j] +
                 (u[i] - uhat[i]) * gs[j];
      if (i == j) v -= s;
      duhat[i * nv + j] = v;
    }
}

void rusanov_jac(const Physics& ph, const double* um, const double* up,
                 double nx, double ny, double* dm, double* dp) {
  int nv = ph.n_vars;
  double ax[kMaxVars * kMaxVars], ay[kMaxVars * kMaxVars];
  double lm = ph.wavespeed(um, nx, ny), lp = ph.wavespeed(up, nx, ny);
  double lam = std::max(lm, lp);
  double glam[kMaxVars] = {0, 0, 0};
  bool minus_max = lm >= lp;
  ph.wavespeed_grad(minus_max ? um : up, nx, ny, glam);

  ph.flux_jac(um, ax, ay);
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < nv; ++j) {
      double v = 0.5 * (nx * ax[i * nv + j] + ny * ay[i * nv + j]);
      if (i == j) v += 0.5 * lam;
      if (minus_max) v -= 0.5 * (up[i] - um[i]) * glam[j];
      dm[i * nv + j] = v;
    }
  ph.flux_jac(up, ax, ay);
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < nv; ++j) {
      double v = 0.5 * (nx * ax[i * nv + j] + ny * ay[i * nv + j]);
      if (i == j) v -= 0.5 * lam;
      if (!minus_max) v -= 0.5 * (up[i] - um[i]) * glam[j];
      dp[i * nv + j] = v;
    }
}

}  // namespace physics
}  // namespace hyflux
