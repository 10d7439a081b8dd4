#pragma once

#include <array>
#include <functional>
#include <vector>

#include "hyflux/mesh.hpp"
#include "hyflux/physics.hpp"

namespace hyflux {
namespace fr {

using BoundaryFn = std::function<void(double x, double y, double t, double* u)>;

// Boundary data enters through ghost states fed to the same Riemann solver
// as interior faces.
struct BoundaryCondition {
  enum class Kind { Freestream, NoSlipWall, Exact };
  Kind kind = Kind::Freestream;
  std::array<double, physics::kMaxVars> state{};
  BoundaryFn exact;
};

// Everything a residual evaluation needs besides the state itself. The state
// layout is element-blocked, variable-major: u[(e*nv + v)*ns + i].
struct Discretization {
  const mesh::Mesh* msh = nullptr;
  const basis::RefElement* re = nullptr;
  const std::vector<mesh::ElemGeom>* geo = nullptr;
  physics::Physics phys;
  std::vector<BoundaryCondition> bcs;  // indexed by boundary tag

  int nv() const { return phys.n_vars; }
  int ns() const { return re->ns; }
  size_t dof() const {
    return static_cast<size_t>(msh->n_elems()) * phys.n_vars * re->ns;
  }
  const double* elem(const double* u, int e) const {
    return u + static_cast<size_t>(e) * phys.n_vars * re->ns;
  }
  double* elem(double* u, int e) const {
    return u + static_cast<size_t>(e) * phys.n_vars * re->ns;
  }
};

// Ghost state for a boundary face flux point.
void boundary_state(const Discretization& d, int tag, double x, double y,
                    double t, const double* uin, double* ughost);

// du/dt from the divergence of the corrected flux, written to r for elements
// with mask[e] != 0 (all elements when mask is null). Face data always comes
// from the full state u. Viscous systems take a domain-wide gradient pass.
void fr_residual(const Discretization& d, const double* u, double t,
                 const std::vector<char>* mask, double* r);

// Independent plain-loop implementation used to validate the parallel kernel.
void fr_residual_serial(const Discretization& d, const double* u, double t,
                        const std::vector<char>* mask, double* r);

// Corrected gradients of the state, BR1-style: common face values are the
// centered means (ghost-state means on boundaries) unless face_common[f]
// points at externally prescribed values in minus-side flux-point order.
void br1_gradients(const Discretization& d, const double* u, double t,
                   const double* const* face_common, double* qx, double* qy);
void br1_gradients_serial(const Discretization& d, const double* u, double t,
                          const double* const* face_common, double* qx,
                          double* qy);

// Traces of both sides of a face at its Gauss-Legendre flux points, in the
// minus side's traversal order (the plus side is reversed to match).
// Boundary faces fill up with the ghost state.
void face_traces(const Discretization& d, const double* u, int face, double t,
                 double* um, double* up);

// Collocation initialization u_i = fn(x_i, y_i).
void project(const Discretization& d,
             const std::function<void(double x, double y, double* u)>& fn,
             double* u);

}  // namespace fr
}  // namespace hyflux
