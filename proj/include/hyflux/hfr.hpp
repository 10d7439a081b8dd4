#pragma once

#include <vector>

#include <Eigen/Dense>

#include "hyflux/fr.hpp"
#include "hyflux/linalg.hpp"
#include "hyflux/partition.hpp"

namespace hyflux {
namespace hfr {

// How a mesh face looks from the implicit region.
enum class FaceRole : char {
  Outside,    // no implicit side
  Trace,      // interior, both sides implicit: carries trace unknowns
  Interface,  // interior, one implicit side: the explicit data is frozen
  Boundary    // boundary face of an implicit element
};

// Discrete trace space of the hybridized solver. HFR keeps p+1 independent
// Gauss-Legendre values per trace face. EFR stores Gauss-Lobatto values and
// merges the endpoints of faces meeting at a vertex, so the trace is
// continuous and the global system shrinks by one point per shared vertex.
struct TraceSpace {
  basis::Scheme kind = basis::Scheme::HFR;
  basis::FaceFamily family = basis::FaceFamily::GL;
  int nf1 = 0;
  int n_hat = 0;               // global trace points, one state vector each
  std::vector<FaceRole> role;  // per mesh face
  // n_faces * nf1 global point ids in minus-side order; -1 off trace faces.
  std::vector<int> face_idx;
  std::vector<int> elems;      // implicit elements, ascending
  std::vector<int> elem_slot;  // position in elems, -1 when explicit

  int dof(int nv) const { return n_hat * nv; }
};

// The EFR variant requires a reference element built with GLL face data and
// p >= 1; violations throw std::invalid_argument.
TraceSpace build_trace_space(const fr::Discretization& d,
                             const partition::Partition& part,
                             basis::Scheme kind);

// uhat[k*nv + v] from the mean of the two element traces at each trace point;
// merged EFR endpoints average every incident face contribution.
void init_trace(const fr::Discretization& d, const TraceSpace& ts,
                const double* u, double* uhat);

// du/dt of the implicit elements. Trace faces are closed by the one-sided
// hybrid flux against uhat, interface and boundary faces by the same Riemann
// fluxes as the explicit solver, so the two regions exchange identical
// interface fluxes. Only implicit blocks of r are written.
void hfr_residual(const fr::Discretization& d, const TraceSpace& ts,
                  const double* u, const double* uhat, double t, double* r);

// Weak flux-continuity defect per trace point: the outward hybrid normal
// fluxes of both sides integrated against the face basis and summed. Zero
// exactly when the trace transmits a single-valued flux.
void transmission_residual(const fr::Discretization& d, const TraceSpace& ts,
                           const double* u, const double* uhat, double t,
                           double* g);

// Linearization of one element's stage equations. Rows and columns of the
// state blocks are indexed v*ns + i; trace slots run face-major over the
// element's trace faces in its own traversal order, nv scalars per point,
// and gmap sends each slot to its global trace point.
struct ElementBlocks {
  int elem = -1;
  int nr = 0;             // local trace scalars
  std::vector<int> gmap;  // nr / nv entries
  Mat a;                  // d(stage residual)/du
  Mat b;                  // d(stage residual)/duhat
  Mat c;                  // d(transmission rows)/du
  Mat d;                  // d(transmission rows)/duhat
  Eigen::PartialPivLU<Mat> alu;
  Mat ainv_b;
};

// Cached Newton matrix for a fixed a_dt = (implicit diagonal) * dt. The
// condensed trace operator lmat = d - c a^-1 b couples trace points through
// element interiors; the viscous terms are left out of the blocks, which
// keeps the linearization convective and lets it lag for diffusive systems.
struct StageJacobian {
  double a_dt = 0.0;
  bool ready = false;
  std::vector<ElementBlocks> blocks;  // parallel to TraceSpace::elems
  linalg::BlockCsr lmat;
  linalg::BlockJacobi prec;
};

void build_stage_jacobian(const fr::Discretization& d, const TraceSpace& ts,
                          const double* u, const double* uhat, double a_dt,
                          double t, StageJacobian& jac);

// Wall-clock seconds spent per solver phase, accumulated across calls.
struct PhaseTimes {
  double residual = 0.0;      // stage residual evaluations
  double transmission = 0.0;  // trace defect assembly
  double jacobian = 0.0;      // block build, condensation, preconditioner
  double linear = 0.0;        // GMRES on the trace system
  double local = 0.0;         // element-local solves and recovery
};

struct NewtonOptions {
  double atol = 1e-11;
  double rtol = 0.0;
  int max_iters = 30;
  bool refresh = true;      // rebuild the jacobian before every update
  PhaseTimes* times = nullptr;
  linalg::GmresOptions gmres;
};

struct NewtonReport {
  bool converged = false;
  int iters = 0;          // updates applied
  double residual = 0.0;  // final combined norm
  int gmres_iters = 0;    // summed over updates
  std::vector<double> history;
};

// Newton solve of the coupled stage system
//   u = ustar + a_dt R(u, uhat),  G(u, uhat) = 0
// restricted to the implicit elements. u holds the full mesh state (explicit
// entries are read-only interface data) and enters as the initial guess, as
// does uhat. Each update solves the trace system by preconditioned GMRES and
// recovers the element interiors, falling back to purely local solves when
// the trace space is empty.
NewtonReport solve_stage(const fr::Discretization& d, const TraceSpace& ts,
                         const double* ustar, double a_dt, double t,
                         const NewtonOptions& opt, StageJacobian& jac,
                         double* u, double* uhat);

// The same stage equations without hybridization: one global Newton system
// over the implicit elements coupled face-to-face through the Riemann flux.
// Kept as the baseline the condensed solver is measured against.
NewtonReport solve_stage_unhybridized(const fr::Discretization& d,
                                      const partition::Partition& part,
                                      const double* ustar, double a_dt,
                                      double t, const NewtonOptions& opt,
                                      double* u);

}  // namespace hfr
}  // namespace hyflux
