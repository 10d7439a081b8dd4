#pragma once

#include <cmath>

namespace hyflux {
namespace physics {

constexpr int kMaxVars = 3;

// Conservation-law definitions shared by the explicit and implicit solvers.
// Two systems: scalar linear advection and the EDAC form of the
// incompressible equations with state u = (P, vx, vy), where the pressure
// flux carries the artificial-compressibility offset theta and every
// component diffuses with the same viscosity nu.
struct Physics {
  enum class Type { Advection, Edac };
  Type type = Type::Advection;
  int n_vars = 1;
  double ax = 1.0, ay = 1.0;  // advection velocity
  double theta = 100.0;       // EDAC pressure offset
  double nu = 0.0;            // kinematic viscosity

  static Physics advection(double ax, double ay);
  static Physics edac(double theta, double nu);

  bool viscous() const { return type == Type::Edac && nu > 0.0; }

  // Convective flux columns F_x(u), F_y(u).
  void flux(const double* u, double* fx, double* fy) const;
  // Row-major jacobians dF_x/du, dF_y/du (n_vars x n_vars each).
  void flux_jac(const double* u, double* dfx, double* dfy) const;

  // Spectral radius of n . dF/du and its state gradient.
  double wavespeed(const double* u, double nx, double ny) const;
  void wavespeed_grad(const double* u, double nx, double ny, double* g) const;

  // Interface stabilization used by the hybridized transmission condition.
  // Isotropic for EDAC; |a.n| (floored away from zero) for advection.
  double stab(const double* uhat, double nx, double ny) const;
  void stab_grad(const double* uhat, double nx, double ny, double* g) const;

  // Gradient diffusion: fv_x = nu * du/dx, fv_y = nu * du/dy, componentwise.
  void viscous_flux(const double* ux, const double* uy, double* fvx,
                    double* fvy) const;
};

// Rusanov flux fhat(um, up, n) and its state jacobians. The wavespeed max
// is differentiated on the side that attains it.
void rusanov(const Physics& ph, const double* um, const double* up, double nx,
             double ny, double* fhat);
void rusanov_jac(const Physics& ph, const double* um, const double* up,
                 double nx, double ny, double* dm, double* dp);

// One-sided hybridized interface flux F(uhat).n + s(uhat) (u - uhat), written
// from the element whose trace is u and outward normal is n. Both sides of a
// face evaluate it against the same uhat, so the transmission condition
// enforces flux continuity. Jacobians are row-major wrt u (du) and uhat
// (duhat).
void hybrid_flux(const Physics& ph, const double* uhat, const double* u,
                 double nx, double ny, double* fhat);
void hybrid_flux_jac(const Physics& ph, const double* uhat, const double* u,
                     double nx, double ny, double* du, double* duhat);

}  // namespace physics
}  // namespace hyflux
