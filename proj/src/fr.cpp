#include "hyflux/fr.hpp"

#include <cstring>
#include <stdexcept>

namespace hyflux {
namespace fr {

namespace {

// face f contributes sign[f] * (E_f ftil_{comp[f]}) to the normal trace of
// the reference flux: comp 0 = xi, 1 = eta
constexpr int kFaceComp[4] = {1, 0, 1, 0};
constexpr double kFaceSign[4] = {-1.0, 1.0, 1.0, -1.0};

using CMap = Eigen::Map<const Eigen::MatrixXd>;
using MMap = Eigen::Map<Eigen::MatrixXd>;

}  // namespace

void boundary_state(const Discretization& d, int tag, double x, double y,
                    double t, const double* uin, double* ughost) {
  const BoundaryCondition& bc = d.bcs.at(tag);
  int nv = d.nv();
  switch (bc.kind) {
    case BoundaryCondition::Kind::Freestream:
      for (int v = 0; v < nv; ++v) ughost[v] = bc.state[v];
      break;
    case BoundaryCondition::Kind::NoSlipWall:
      // reflected velocity pins the face mean to the wall value
      ughost[0] = uin[0];
      for (int v = 1; v < nv; ++v) ughost[v] = -uin[v];
      break;
    case BoundaryCondition::Kind::Exact:
      bc.exact(x, y, t, ughost);
      break;
  }
}

namespace {

// Phase 1 of both kernels: per-element reference fluxes at solution points
// and their interpolated normal traces, plus solution traces.
struct FaceArrays {
  int nv, ns, nf1, ne;
  std::vector<double> ftx, fty;  // [(e*nv+v)*ns + i]
  std::vector<double> uf, hd;    // [((e*4+f)*nv + v)*nf1 + m]
  double* uface(int e, int f, int v) {
    return uf.data() + (static_cast<size_t>(e) * 4 + f) * nv * nf1 +
           static_cast<size_t>(v) * nf1;
  }
  const double* uface(int e, int f, int v) const {
    return const_cast<FaceArrays*>(this)->uface(e, f, v);
  }
  size_t fslot(int e, int f) const {
    return (static_cast<size_t>(e) * 4 + f) * nv * nf1;
  }
  void resize(int ne_, int nv_, int ns_, int nf1_) {
    ne = ne_;
    nv = nv_;
    ns = ns_;
    nf1 = nf1_;
    ftx.resize(static_cast<size_t>(ne) * nv * ns);
    fty.resize(static_cast<size_t>(ne) * nv * ns);
    uf.resize(static_cast<size_t>(ne) * 4 * nv * nf1);
    hd.resize(static_cast<size_t>(ne) * 4 * nv * nf1);
  }
};

void build_flux_arrays(const Discretization& d, const double* u,
                       const double* qx, const double* qy, FaceArrays& fa) {
  const auto& re = *d.re;
  const auto& geo = *d.geo;
  int nv = d.nv(), ns = re.ns, nf1 = re.nf1, ne = d.msh->n_elems();
  fa.resize(ne, nv, ns, nf1);
  bool visc = qx != nullptr;

#pragma omp parallel for schedule(static)
  for (int e = 0; e < ne; ++e) {
    const double* ue = d.elem(u, e);
    const auto& g = geo[e];
    double* ftx = &fa.ftx[static_cast<size_t>(e) * nv * ns];
    double* fty = &fa.fty[static_cast<size_t>(e) * nv * ns];
    double fx[physics::kMaxVars], fy[physics::kMaxVars], up[physics::kMaxVars];
    for (int i = 0; i < ns; ++i) {
      for (int v = 0; v < nv; ++v) up[v] = ue[v * ns + i];
      d.phys.flux(up, fx, fy);
      if (visc) {
        const double* qxe = qx + (static_cast<size_t>(e) * nv) * ns;
        const double* qye = qy + (static_cast<size_t>(e) * nv) * ns;
        for (int v = 0; v < nv; ++v) {
          fx[v] -= d.phys.nu * qxe[v * ns + i];
          fy[v] -= d.phys.nu * qye[v * ns + i];
        }
      }
      const double* a = &g.adj[4 * i];
      for (int v = 0; v < nv; ++v) {
        ftx[v * ns + i] = a[0] * fx[v] + a[1] * fy[v];
        fty[v * ns + i] = a[2] * fx[v] + a[3] * fy[v];
      }
    }
    // traces of u and of the reference flux normal component
    CMap U(ue, ns, nv);
    CMap FTX(ftx, ns, nv), FTY(fty, ns, nv);
    for (int f = 0; f < 4; ++f) {
      MMap UF(&fa.uf[fa.fslot(e, f)], nf1, nv);
      MMap HD(&fa.hd[fa.fslot(e, f)], nf1, nv);
      UF.noalias() = re.e_gl[f] * U;
      HD.noalias() = kFaceSign[f] * (re.e_gl[f] * (kFaceComp[f] ? FTY : FTX));
    }
  }
}

}  // namespace

void fr_residual(const Discretization& d, const double* u, double t,
                 const std::vector<char>* mask, double* r) {
  const auto& re = *d.re;
  const auto& geo = *d.geo;
  const auto& msh = *d.msh;
  int nv = d.nv(), ns = re.ns, nf1 = re.nf1, ne = msh.n_elems();

  std::vector<double> qx, qy, qfx, qfy;
  if (d.phys.viscous()) {
    qx.resize(d.dof());
    qy.resize(d.dof());
    br1_gradients(d, u, t, nullptr, qx.data(), qy.data());
    // gradient traces for the centered viscous face flux
    qfx.resize(static_cast<size_t>(ne) * 4 * nv * nf1);
    qfy.resize(static_cast<size_t>(ne) * 4 * nv * nf1);
#pragma omp parallel for schedule(static)
    for (int e = 0; e < ne; ++e) {
      CMap QX(&qx[static_cast<size_t>(e) * nv * ns], ns, nv);
      CMap QY(&qy[static_cast<size_t>(e) * nv * ns], ns, nv);
      for (int f = 0; f < 4; ++f) {
        size_t slot = (static_cast<size_t>(e) * 4 + f) * nv * nf1;
        MMap(&qfx[slot], nf1, nv).noalias() = re.e_gl[f] * QX;
        MMap(&qfy[slot], nf1, nv).noalias() = re.e_gl[f] * QY;
      }
    }
  }

  FaceArrays fa;
  build_flux_arrays(d, u, qx.empty() ? nullptr : qx.data(),
                    qy.empty() ? nullptr : qy.data(), fa);

  std::vector<double> ht(static_cast<size_t>(ne) * 4 * nv * nf1);
  int nfaces = static_cast<int>(msh.faces.size());
#pragma omp parallel for schedule(static)
  for (int fi = 0; fi < nfaces; ++fi) {
    const mesh::Face& fc = msh.faces[fi];
    const mesh::FaceGeom& gm = geo[fc.em].fgl[fc.fm];
    double um[physics::kMaxVars], up[physics::kMaxVars];
    double fhat[physics::kMaxVars];
    double* htm = &ht[fa.fslot(fc.em, fc.fm)];
    double* htp = fc.boundary() ? nullptr : &ht[fa.fslot(fc.ep, fc.fp)];
    for (int m = 0; m < nf1; ++m) {
      int mp = nf1 - 1 - m;  // matching slot on the plus side
      for (int v = 0; v < nv; ++v) {
        um[v] = fa.uface(fc.em, fc.fm, v)[m];
        up[v] = fc.boundary() ? 0.0 : fa.uface(fc.ep, fc.fp, v)[mp];
      }
      if (fc.boundary())
        boundary_state(d, fc.tag, gm.x[m], gm.y[m], t, um, up);
      physics::rusanov(d.phys, um, up, gm.nx[m], gm.ny[m], fhat);
      if (d.phys.viscous()) {
        size_t sm = fa.fslot(fc.em, fc.fm), sp = fc.boundary() ? 0 : fa.fslot(fc.ep, fc.fp);
        for (int v = 0; v < nv; ++v) {
          double gxm = qfx[sm + v * nf1 + m], gym = qfy[sm + v * nf1 + m];
          double gxp = fc.boundary() ? gxm : qfx[sp + v * nf1 + mp];
          double gyp = fc.boundary() ? gym : qfy[sp + v * nf1 + mp];
          fhat[v] -= 0.5 * d.phys.nu *
                     ((gxm + gxp) * gm.nx[m] + (gym + gyp) * gm.ny[m]);
        }
      }
      for (int v = 0; v < nv; ++v) {
        htm[v * nf1 + m] = gm.jf[m] * fhat[v] - fa.hd[fa.fslot(fc.em, fc.fm) + v * nf1 + m];
        if (htp)
          htp[v * nf1 + mp] = -gm.jf[m] * fhat[v] -
                              fa.hd[fa.fslot(fc.ep, fc.fp) + v * nf1 + mp];
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int e = 0; e < ne; ++e) {
    if (mask && !(*mask)[e]) continue;
    CMap FTX(&fa.ftx[static_cast<size_t>(e) * nv * ns], ns, nv);
    CMap FTY(&fa.fty[static_cast<size_t>(e) * nv * ns], ns, nv);
    Mat div = re.d_xi * FTX + re.d_eta * FTY;
    for (int f = 0; f < 4; ++f)
      div.noalias() += re.k_gl[f] * CMap(&ht[fa.fslot(e, f)], nf1, nv);
    double* rel = d.elem(r, e);
    const auto& g = geo[e];
    for (int v = 0; v < nv; ++v)
      for (int i = 0; i < ns; ++i) rel[v * ns + i] = -div(i, v) / g.jac[i];
  }
}

void br1_gradients(const Discretization& d, const double* u, double t,
                   const double* const* face_common, double* qx, double* qy) {
  const auto& re = *d.re;
  const auto& geo = *d.geo;
  const auto& msh = *d.msh;
  int nv = d.nv(), ns = re.ns, nf1 = re.nf1, ne = msh.n_elems();

  // reference "fluxes" of the two gradient equations and their face traces
  std::vector<double> gxx(static_cast<size_t>(ne) * nv * ns),
      gxe(gxx.size()), gyx(gxx.size()), gye(gxx.size());
  std::vector<double> uf(static_cast<size_t>(ne) * 4 * nv * nf1),
      hdx(uf.size()), hdy(uf.size());
  auto slot = [&](int e, int f) {
    return (static_cast<size_t>(e) * 4 + f) * nv * nf1;
  };

#pragma omp parallel for schedule(static)
  for (int e = 0; e < ne; ++e) {
    const double* ue = d.elem(u, e);
    const auto& g = geo[e];
    size_t eo = static_cast<size_t>(e) * nv * ns;
    for (int i = 0; i < ns; ++i) {
      const double* a = &g.adj[4 * i];
      for (int v = 0; v < nv; ++v) {
        double uv = ue[v * ns + i];
        gxx[eo + v * ns + i] = a[0] * uv;  // xi-flux of d/dx
        gxe[eo + v * ns + i] = a[2] * uv;  // eta-flux of d/dx
        gyx[eo + v * ns + i] = a[1] * uv;
        gye[eo + v * ns + i] = a[3] * uv;
      }
    }
    CMap U(ue, ns, nv);
    CMap GXX(&gxx[eo], ns, nv), GXE(&gxe[eo], ns, nv);
    CMap GYX(&gyx[eo], ns, nv), GYE(&gye[eo], ns, nv);
    for (int f = 0; f < 4; ++f) {
      MMap(&uf[slot(e, f)], nf1, nv).noalias() = re.e_gl[f] * U;
      MMap(&hdx[slot(e, f)], nf1, nv).noalias() =
          kFaceSign[f] * (re.e_gl[f] * (kFaceComp[f] ? GXE : GXX));
      MMap(&hdy[slot(e, f)], nf1, nv).noalias() =
          kFaceSign[f] * (re.e_gl[f] * (kFaceComp[f] ? GYE : GYX));
    }
  }

  std::vector<double> htx(uf.size()), hty(uf.size());
  int nfaces = static_cast<int>(msh.faces.size());
#pragma omp parallel for schedule(static)
  for (int fi = 0; fi < nfaces; ++fi) {
    const mesh::Face& fc = msh.faces[fi];
    const mesh::FaceGeom& gm = geo[fc.em].fgl[fc.fm];
    const double* common_override = face_common ? face_common[fi] : nullptr;
    double um[physics::kMaxVars], up[physics::kMaxVars];
    for (int m = 0; m < nf1; ++m) {
      int mp = nf1 - 1 - m;
      for (int v = 0; v < nv; ++v) {
        um[v] = uf[slot(fc.em, fc.fm) + v * nf1 + m];
        up[v] = fc.boundary() ? 0.0 : uf[slot(fc.ep, fc.fp) + v * nf1 + mp];
      }
      if (fc.boundary())
        boundary_state(d, fc.tag, gm.x[m], gm.y[m], t, um, up);
      for (int v = 0; v < nv; ++v) {
        double c = common_override ? common_override[v * nf1 + m]
                                   : 0.5 * (um[v] + up[v]);
        htx[slot(fc.em, fc.fm) + v * nf1 + m] =
            gm.jf[m] * c * gm.nx[m] - hdx[slot(fc.em, fc.fm) + v * nf1 + m];
        hty[slot(fc.em, fc.fm) + v * nf1 + m] =
            gm.jf[m] * c * gm.ny[m] - hdy[slot(fc.em, fc.fm) + v * nf1 + m];
        if (!fc.boundary()) {
          htx[slot(fc.ep, fc.fp) + v * nf1 + mp] =
              -gm.jf[m] * c * gm.nx[m] - hdx[slot(fc.ep, fc.fp) + v * nf1 + mp];
          hty[slot(fc.ep, fc.fp) + v * nf1 + mp] =
              -gm.jf[m] * c * gm.ny[m] - hdy[slot(fc.ep, fc.fp) + v * nf1 + mp];
        }
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int e = 0; e < ne; ++e) {
    size_t eo = static_cast<size_t>(e) * nv * ns;
    Mat dx = re.d_xi * CMap(&gxx[eo], ns, nv) + re.d_eta * CMap(&gxe[eo], ns, nv);
    Mat dy = re.d_xi * CMap(&gyx[eo], ns, nv) + re.d_eta * CMap(&gye[eo], ns, nv);
    for (int f = 0; f < 4; ++f) {
      dx.noalias() += re.k_gl[f] * CMap(&htx[slot(e, f)], nf1, nv);
      dy.noalias() += re.k_gl[f] * CMap(&hty[slot(e, f)], nf1, nv);
    }
    const auto& g = geo[e];
    for (int v = 0; v < nv; ++v)
      for (int i = 0; i < ns; ++i) {
        qx[eo + v * ns + i] = dx(i, v) / g.jac[i];
        qy[eo + v * ns + i] = dy(i, v) / g.jac[i];
      }
  }
}

void face_traces(const Discretization& d, const double* u, int face, double t,
                 double* um, double* up) {
  const auto& re = *d.re;
  const mesh::Face& fc = d.msh->faces[face];
  int nv = d.nv(), nf1 = re.nf1;
  CMap UM(d.elem(u, fc.em), re.ns, nv);
  Mat tm = re.e_gl[fc.fm] * UM;
  for (int v = 0; v < nv; ++v)
    for (int m = 0; m < nf1; ++m) um[v * nf1 + m] = tm(m, v);
  if (!fc.boundary()) {
    CMap UP(d.elem(u, fc.ep), re.ns, nv);
    Mat tp = re.e_gl[fc.fp] * UP;
    for (int v = 0; v < nv; ++v)
      for (int m = 0; m < nf1; ++m) up[v * nf1 + m] = tp(nf1 - 1 - m, v);
  } else {
    const mesh::FaceGeom& gm = (*d.geo)[fc.em].fgl[fc.fm];
    double uin[physics::kMaxVars], ug[physics::kMaxVars];
    for (int m = 0; m < nf1; ++m) {
      for (int v = 0; v < nv; ++v) uin[v] = um[v * nf1 + m];
      boundary_state(d, fc.tag, gm.x[m], gm.y[m], t, uin, ug);
      for (int v = 0; v < nv; ++v) up[v * nf1 + m] = ug[v];
    }
  }
}

void project(const Discretization& d,
             const std::function<void(double x, double y, double* u)>& fn,
             double* u) {
  int nv = d.nv(), ns = d.ns();
  double vals[physics::kMaxVars];
  for (int e = 0; e < d.msh->n_elems(); ++e) {
    const auto& g = (*d.geo)[e];
    double* ue = d.elem(u, e);
    for (int i = 0; i < ns; ++i) {
      fn(g.x[i], g.y[i], vals);
      for (int v = 0; v < nv; ++v) ue[v * ns + i] = vals[v];
    }
  }
}

}  // namespace fr
}  // namespace hyflux
