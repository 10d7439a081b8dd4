#include "hyflux/hfr.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace hyflux {
namespace hfr {

using fr::Discretization;
using physics::kMaxVars;

namespace {

// accumulates the scope's wall time into *slot (when given)
struct ScopedTimer {
  explicit ScopedTimer(PhaseTimes* pt, double PhaseTimes::*field)
      : slot(pt ? &(pt->*field) : nullptr),
        start(std::chrono::steady_clock::now()) {}
  ~ScopedTimer() {
    if (slot)
      *slot += std::chrono::duration<double>(
                   std::chrono::steady_clock::now() - start)
                   .count();
  }
  double* slot;
  std::chrono::steady_clock::time_point start;
};

// same face tables as the explicit kernel: face f contributes
// sign[f] * (E_f ftil_{comp[f]}) to the normal trace of the reference flux
constexpr int kFaceComp[4] = {1, 0, 1, 0};
constexpr double kFaceSign[4] = {-1.0, 1.0, 1.0, -1.0};

using CMap = Eigen::Map<const Mat>;

bool minus_side(const mesh::Face& fc, int e, int f) {
  return fc.em == e && fc.fm == f;
}

const mesh::FaceGeom& face_geom(const mesh::ElemGeom& g, int f,
                                basis::FaceFamily fam) {
  return fam == basis::FaceFamily::GL ? g.fgl[f] : g.fgll[f];
}

// Corrected gradients with the trace values imposed as the common states on
// trace faces; everything else keeps the centered means, so explicit
// neighbours see exactly the gradients of the explicit solver.
void hybrid_gradients(const Discretization& d, const TraceSpace& ts,
                      const double* u, const double* uhat, double t,
                      std::vector<double>& qx, std::vector<double>& qy) {
  const auto& re = *d.re;
  int nv = d.nv(), nf1 = ts.nf1;
  int nfaces = static_cast<int>(d.msh->faces.size());
  qx.resize(d.dof());
  qy.resize(d.dof());

  Mat gll2gl;  // EFR traces live at GLL points, the gradient lift wants GL
  if (ts.family == basis::FaceFamily::GLL) {
    gll2gl.resize(nf1, nf1);
    for (int m = 0; m < nf1; ++m) {
      std::vector<double> l = basis::lagrange_values(re.gll.x, re.gl.x[m]);
      for (int q = 0; q < nf1; ++q) gll2gl(m, q) = l[q];
    }
  }

  std::vector<const double*> common(nfaces, nullptr);
  std::vector<double> store;
  std::vector<int> tface;
  for (int fid = 0; fid < nfaces; ++fid)
    if (ts.role[fid] == FaceRole::Trace) tface.push_back(fid);
  store.resize(tface.size() * static_cast<size_t>(nv) * nf1);
  for (size_t k = 0; k < tface.size(); ++k) {
    int fid = tface[k];
    double* cv = &store[k * nv * nf1];
    common[fid] = cv;
    const int* idx = &ts.face_idx[static_cast<size_t>(fid) * nf1];
    for (int v = 0; v < nv; ++v)
      for (int m = 0; m < nf1; ++m) {
        if (ts.family == basis::FaceFamily::GL) {
          cv[v * nf1 + m] = uhat[static_cast<size_t>(idx[m]) * nv + v];
        } else {
          double s = 0.0;
          for (int q = 0; q < nf1; ++q)
            s += gll2gl(m, q) * uhat[static_cast<size_t>(idx[q]) * nv + v];
          cv[v * nf1 + m] = s;
        }
      }
  }
  fr::br1_gradients(d, u, t, common.data(), qx.data(), qy.data());
}

// Ghost-state sensitivity to the interior trace, row-major nv x nv.
void ghost_jac(const Discretization& d, int tag, double* dg) {
  int nv = d.nv();
  std::fill(dg, dg + nv * nv, 0.0);
  if (d.bcs.at(tag).kind == fr::BoundaryCondition::Kind::NoSlipWall) {
    dg[0] = 1.0;
    for (int v = 1; v < nv; ++v) dg[v * nv + v] = -1.0;
  }
}

// Contravariant convective flux jacobians at every solution point,
// row-major nv x nv per point.
void contravariant_jacs(const Discretization& d, int e, const double* ue,
                        std::vector<double>& mxi, std::vector<double>& meta) {
  const auto& g = (*d.geo)[e];
  int nv = d.nv(), ns = d.ns();
  mxi.resize(static_cast<size_t>(ns) * nv * nv);
  meta.resize(mxi.size());
  double us[kMaxVars], ax[kMaxVars * kMaxVars], ay[kMaxVars * kMaxVars];
  for (int j = 0; j < ns; ++j) {
    for (int v = 0; v < nv; ++v) us[v] = ue[v * ns + j];
    d.phys.flux_jac(us, ax, ay);
    const double* aj = &g.adj[4 * j];
    for (int k = 0; k < nv * nv; ++k) {
      mxi[static_cast<size_t>(j) * nv * nv + k] = aj[0] * ax[k] + aj[1] * ay[k];
      meta[static_cast<size_t>(j) * nv * nv + k] = aj[2] * ax[k] + aj[3] * ay[k];
    }
  }
}

}  // namespace

TraceSpace build_trace_space(const Discretization& d,
                             const partition::Partition& part,
                             basis::Scheme kind) {
  const mesh::Mesh& m = *d.msh;
  const basis::RefElement& re = *d.re;
  if (kind == basis::Scheme::FR)
    throw std::invalid_argument("trace space needs a hybridized scheme");
  if (kind == basis::Scheme::EFR &&
      (re.scheme != basis::Scheme::EFR || re.p < 1))
    throw std::invalid_argument(
        "EFR trace needs p >= 1 and a reference element with GLL face data");

  TraceSpace ts;
  ts.kind = kind;
  ts.family = kind == basis::Scheme::EFR ? basis::FaceFamily::GLL
                                         : basis::FaceFamily::GL;
  ts.nf1 = re.nf1;
  int nfaces = static_cast<int>(m.faces.size());
  ts.role.assign(nfaces, FaceRole::Outside);
  ts.face_idx.assign(static_cast<size_t>(nfaces) * ts.nf1, -1);
  for (int fid = 0; fid < nfaces; ++fid) {
    const mesh::Face& fc = m.faces[fid];
    bool im = part.implicit[fc.em];
    if (fc.boundary()) {
      ts.role[fid] = im ? FaceRole::Boundary : FaceRole::Outside;
      continue;
    }
    bool ip = part.implicit[fc.ep];
    ts.role[fid] = im && ip ? FaceRole::Trace
                   : im || ip ? FaceRole::Interface
                              : FaceRole::Outside;
  }

  // number trace points face by face in minus-side order; EFR shares the
  // endpoint ids of faces meeting at a (periodically identified) vertex
  std::vector<int> vert_id(m.n_nodes(), -1);
  int npe = m.nodes_per_elem();
  int next = 0;
  for (int fid = 0; fid < nfaces; ++fid) {
    if (ts.role[fid] != FaceRole::Trace) continue;
    int* idx = &ts.face_idx[static_cast<size_t>(fid) * ts.nf1];
    if (ts.kind != basis::Scheme::EFR) {
      for (int q = 0; q < ts.nf1; ++q) idx[q] = next++;
      continue;
    }
    const mesh::Face& fc = m.faces[fid];
    int v0 = m.vertex_canon[m.conn[fc.em * npe + fc.fm]];
    int v1 = m.vertex_canon[m.conn[fc.em * npe + (fc.fm + 1) % 4]];
    if (vert_id[v0] < 0) vert_id[v0] = next++;
    idx[0] = vert_id[v0];
    for (int q = 1; q < ts.nf1 - 1; ++q) idx[q] = next++;
    if (vert_id[v1] < 0) vert_id[v1] = next++;
    idx[ts.nf1 - 1] = vert_id[v1];
  }
  ts.n_hat = next;

  ts.elem_slot.assign(m.n_elems(), -1);
  for (int e = 0; e < m.n_elems(); ++e)
    if (part.implicit[e]) {
      ts.elem_slot[e] = static_cast<int>(ts.elems.size());
      ts.elems.push_back(e);
    }
  return ts;
}

void init_trace(const Discretization& d, const TraceSpace& ts, const double* u,
                double* uhat) {
  const auto& re = *d.re;
  int nv = d.nv(), ns = re.ns, nf1 = ts.nf1;
  std::fill(uhat, uhat + ts.dof(nv), 0.0);
  std::vector<double> cnt(ts.n_hat, 0.0);
  for (size_t fid = 0; fid < d.msh->faces.size(); ++fid) {
    if (ts.role[fid] != FaceRole::Trace) continue;
    const mesh::Face& fc = d.msh->faces[fid];
    const int* idx = &ts.face_idx[fid * nf1];
    Mat tm = re.e_face(fc.fm, ts.family) * CMap(d.elem(u, fc.em), ns, nv);
    Mat tp = re.e_face(fc.fp, ts.family) * CMap(d.elem(u, fc.ep), ns, nv);
    for (int q = 0; q < nf1; ++q) {
      int k = idx[q];
      for (int v = 0; v < nv; ++v)
        uhat[static_cast<size_t>(k) * nv + v] +=
            0.5 * (tm(q, v) + tp(nf1 - 1 - q, v));
      cnt[k] += 1.0;
    }
  }
  for (int k = 0; k < ts.n_hat; ++k)
    for (int v = 0; v < nv; ++v)
      uhat[static_cast<size_t>(k) * nv + v] /= cnt[k];
}

void hfr_residual(const Discretization& d, const TraceSpace& ts,
                  const double* u, const double* uhat, double t, double* r) {
  const auto& re = *d.re;
  const auto& geo = *d.geo;
  const auto& msh = *d.msh;
  int nv = d.nv(), ns = re.ns, nf1 = re.nf1;
  int ni = static_cast<int>(ts.elems.size());
  bool visc = d.phys.viscous();

  std::vector<double> qx, qy;
  if (visc) hybrid_gradients(d, ts, u, uhat, t, qx, qy);
  auto qmap = [&](const std::vector<double>& q, int e) {
    return CMap(&q[static_cast<size_t>(e) * nv * ns], ns, nv);
  };

#pragma omp parallel for schedule(static)
  for (int si = 0; si < ni; ++si) {
    int e = ts.elems[si];
    const auto& g = geo[e];
    const double* ue = d.elem(u, e);
    CMap U(ue, ns, nv);

    Mat ftx(ns, nv), fty(ns, nv);
    double us[kMaxVars], fx[kMaxVars], fy[kMaxVars];
    for (int i = 0; i < ns; ++i) {
      for (int v = 0; v < nv; ++v) us[v] = ue[v * ns + i];
      d.phys.flux(us, fx, fy);
      if (visc)
        for (int v = 0; v < nv; ++v) {
          fx[v] -= d.phys.nu * qx[(static_cast<size_t>(e) * nv + v) * ns + i];
          fy[v] -= d.phys.nu * qy[(static_cast<size_t>(e) * nv + v) * ns + i];
        }
      const double* a = &g.adj[4 * i];
      for (int v = 0; v < nv; ++v) {
        ftx(i, v) = a[0] * fx[v] + a[1] * fy[v];
        fty(i, v) = a[2] * fx[v] + a[3] * fy[v];
      }
    }
    Mat div = re.d_xi * ftx + re.d_eta * fty;

    for (int f = 0; f < 4; ++f) {
      int fid = msh.elem_face[e][f];
      FaceRole role = ts.role[fid];
      const mesh::Face& fc = msh.faces[fid];
      basis::FaceFamily fam =
          role == FaceRole::Trace ? ts.family : basis::FaceFamily::GL;
      const Mat& E = re.e_face(f, fam);
      Mat hdm = kFaceSign[f] * (E * (kFaceComp[f] ? fty : ftx));
      Mat ht(nf1, nv);
      double ut[kMaxVars], un[kMaxVars], fhat[kMaxVars];

      if (role == FaceRole::Trace) {
        bool ms = minus_side(fc, e, f);
        const mesh::FaceGeom& fg = face_geom(g, f, fam);
        const int* idx = &ts.face_idx[static_cast<size_t>(fid) * nf1];
        Mat tr = E * U;
        Mat tqx, tqy, nqx, nqy;
        if (visc) {
          int eo = ms ? fc.ep : fc.em, fo = ms ? fc.fp : fc.fm;
          const Mat& EO = re.e_face(fo, fam);
          tqx = E * qmap(qx, e);
          tqy = E * qmap(qy, e);
          nqx = EO * qmap(qx, eo);
          nqy = EO * qmap(qy, eo);
        }
        for (int q = 0; q < nf1; ++q) {
          int mq = ms ? q : nf1 - 1 - q;
          const double* uh = uhat + static_cast<size_t>(idx[mq]) * nv;
          for (int v = 0; v < nv; ++v) ut[v] = tr(q, v);
          physics::hybrid_flux(d.phys, uh, ut, fg.nx[q], fg.ny[q], fhat);
          if (visc) {
            int qn = nf1 - 1 - q;
            for (int v = 0; v < nv; ++v)
              fhat[v] -= 0.5 * d.phys.nu *
                         ((tqx(q, v) + nqx(qn, v)) * fg.nx[q] +
                          (tqy(q, v) + nqy(qn, v)) * fg.ny[q]);
          }
          for (int v = 0; v < nv; ++v)
            ht(q, v) = fg.jf[q] * fhat[v] - hdm(q, v);
        }
      } else if (role == FaceRole::Interface) {
        // evaluated in the minus frame, reproducing the explicit kernel's
        // flux bit for bit so the two regions exchange identical values
        bool ms = minus_side(fc, e, f);
        const mesh::FaceGeom& gm = geo[fc.em].fgl[fc.fm];
        Mat tm = re.e_gl[fc.fm] * CMap(d.elem(u, fc.em), ns, nv);
        Mat tp = re.e_gl[fc.fp] * CMap(d.elem(u, fc.ep), ns, nv);
        Mat gxm, gym, gxp, gyp;
        if (visc) {
          gxm = re.e_gl[fc.fm] * qmap(qx, fc.em);
          gym = re.e_gl[fc.fm] * qmap(qy, fc.em);
          gxp = re.e_gl[fc.fp] * qmap(qx, fc.ep);
          gyp = re.e_gl[fc.fp] * qmap(qy, fc.ep);
        }
        for (int m = 0; m < nf1; ++m) {
          int mp = nf1 - 1 - m;
          for (int v = 0; v < nv; ++v) {
            ut[v] = tm(m, v);
            un[v] = tp(mp, v);
          }
          physics::rusanov(d.phys, ut, un, gm.nx[m], gm.ny[m], fhat);
          if (visc)
            for (int v = 0; v < nv; ++v)
              fhat[v] -= 0.5 * d.phys.nu *
                         ((gxm(m, v) + gxp(mp, v)) * gm.nx[m] +
                          (gym(m, v) + gyp(mp, v)) * gm.ny[m]);
          if (ms)
            for (int v = 0; v < nv; ++v)
              ht(m, v) = gm.jf[m] * fhat[v] - hdm(m, v);
          else
            for (int v = 0; v < nv; ++v)
              ht(mp, v) = -gm.jf[m] * fhat[v] - hdm(mp, v);
        }
      } else {  // Boundary
        const mesh::FaceGeom& gm = g.fgl[f];
        Mat tr = E * U;
        Mat gxm, gym;
        if (visc) {
          gxm = E * qmap(qx, e);
          gym = E * qmap(qy, e);
        }
        for (int m = 0; m < nf1; ++m) {
          for (int v = 0; v < nv; ++v) ut[v] = tr(m, v);
          fr::boundary_state(d, fc.tag, gm.x[m], gm.y[m], t, ut, un);
          physics::rusanov(d.phys, ut, un, gm.nx[m], gm.ny[m], fhat);
          if (visc)
            for (int v = 0; v < nv; ++v)
              fhat[v] -= 0.5 * d.phys.nu *
                         ((gxm(m, v) + gxm(m, v)) * gm.nx[m] +
                          (gym(m, v) + gym(m, v)) * gm.ny[m]);
          for (int v = 0; v < nv; ++v)
            ht(m, v) = gm.jf[m] * fhat[v] - hdm(m, v);
        }
      }
      div.noalias() += re.k_face(f, fam) * ht;
    }

    double* rel = d.elem(r, e);
    for (int v = 0; v < nv; ++v)
      for (int i = 0; i < ns; ++i) rel[v * ns + i] = -div(i, v) / g.jac[i];
  }
}

void transmission_residual(const Discretization& d, const TraceSpace& ts,
                           const double* u, const double* uhat, double /*t*/,
                           double* g) {
  const auto& re = *d.re;
  const auto& geo = *d.geo;
  const auto& msh = *d.msh;
  int nv = d.nv(), ns = re.ns, nf1 = re.nf1;
  std::fill(g, g + ts.dof(nv), 0.0);
  const Mat& M = re.face_mass(ts.family);
  double ut[kMaxVars], fhat[kMaxVars];
  Mat fh(nf1, nv);

  for (size_t fid = 0; fid < msh.faces.size(); ++fid) {
    if (ts.role[fid] != FaceRole::Trace) continue;
    const mesh::Face& fc = msh.faces[fid];
    const int* idx = &ts.face_idx[fid * nf1];
    for (int side = 0; side < 2; ++side) {
      int e = side ? fc.ep : fc.em;
      int f = side ? fc.fp : fc.fm;
      const mesh::FaceGeom& fg = face_geom(geo[e], f, ts.family);
      Mat tr = re.e_face(f, ts.family) * CMap(d.elem(u, e), ns, nv);
      for (int q = 0; q < nf1; ++q) {
        int mq = side ? nf1 - 1 - q : q;
        const double* uh = uhat + static_cast<size_t>(idx[mq]) * nv;
        for (int v = 0; v < nv; ++v) ut[v] = tr(q, v);
        physics::hybrid_flux(d.phys, uh, ut, fg.nx[q], fg.ny[q], fhat);
        for (int v = 0; v < nv; ++v) fh(q, v) = fg.jf[q] * fhat[v];
      }
      // the symmetric face nodes make the Gram matrix reversal-invariant,
      // so own-order rows and columns integrate the plus side correctly
      for (int tq = 0; tq < nf1; ++tq) {
        int mt = side ? nf1 - 1 - tq : tq;
        double* row = g + static_cast<size_t>(idx[mt]) * nv;
        for (int v = 0; v < nv; ++v) {
          double acc = 0.0;
          for (int q = 0; q < nf1; ++q) acc += M(tq, q) * fh(q, v);
          row[v] += acc;
        }
      }
    }
  }
}

void build_stage_jacobian(const Discretization& d, const TraceSpace& ts,
                          const double* u, const double* uhat, double a_dt,
                          double t, StageJacobian& jac) {
  const auto& re = *d.re;
  const auto& geo = *d.geo;
  const auto& msh = *d.msh;
  int nv = d.nv(), ns = re.ns, nf1 = re.nf1, nl = nv * ns;
  int ni = static_cast<int>(ts.elems.size());
  jac.blocks.resize(ni);
  jac.a_dt = a_dt;

#pragma omp parallel for schedule(static)
  for (int si = 0; si < ni; ++si) {
    int e = ts.elems[si];
    ElementBlocks& eb = jac.blocks[si];
    eb.elem = e;
    const auto& g = geo[e];
    const double* ue = d.elem(u, e);
    CMap U(ue, ns, nv);

    eb.gmap.clear();
    for (int f = 0; f < 4; ++f) {
      int fid = msh.elem_face[e][f];
      if (ts.role[fid] != FaceRole::Trace) continue;
      bool ms = minus_side(msh.faces[fid], e, f);
      const int* idx = &ts.face_idx[static_cast<size_t>(fid) * nf1];
      for (int q = 0; q < nf1; ++q)
        eb.gmap.push_back(idx[ms ? q : nf1 - 1 - q]);
    }
    eb.nr = static_cast<int>(eb.gmap.size()) * nv;

    eb.a = Mat::Identity(nl, nl);
    eb.b = Mat::Zero(nl, eb.nr);
    eb.c = Mat::Zero(eb.nr, nl);
    eb.d = Mat::Zero(eb.nr, eb.nr);

    std::vector<double> mxi, meta;
    contravariant_jacs(d, e, ue, mxi, meta);
    for (int j = 0; j < ns; ++j) {
      const double* mx = &mxi[static_cast<size_t>(j) * nv * nv];
      const double* me = &meta[static_cast<size_t>(j) * nv * nv];
      for (int i = 0; i < ns; ++i) {
        double cx = a_dt / g.jac[i] * re.d_xi(i, j);
        double ce = a_dt / g.jac[i] * re.d_eta(i, j);
        for (int v = 0; v < nv; ++v)
          for (int w = 0; w < nv; ++w)
            eb.a(v * ns + i, w * ns + j) +=
                cx * mx[v * nv + w] + ce * me[v * nv + w];
      }
    }

    int f_off = 0;
    double ut[kMaxVars], un[kMaxVars];
    double du[kMaxVars * kMaxVars], duh[kMaxVars * kMaxVars];
    double dm[kMaxVars * kMaxVars], dp[kMaxVars * kMaxVars];
    double dg[kMaxVars * kMaxVars];
    for (int f = 0; f < 4; ++f) {
      int fid = msh.elem_face[e][f];
      FaceRole role = ts.role[fid];
      const mesh::Face& fc = msh.faces[fid];
      bool tracef = role == FaceRole::Trace;
      basis::FaceFamily fam = tracef ? ts.family : basis::FaceFamily::GL;
      const Mat& E = re.e_face(f, fam);
      const Mat& K = re.k_face(f, fam);
      const Mat& M = re.face_mass(fam);
      const mesh::FaceGeom& fg = face_geom(g, f, fam);
      const int* idx = &ts.face_idx[static_cast<size_t>(fid) * nf1];
      bool ms = minus_side(fc, e, f);

      // trace of the reference flux (hd) differentiates into the volume
      // jacobians through the interpolation
      Mat KE = K * E;
      const std::vector<double>& mc = kFaceComp[f] ? meta : mxi;
      for (int j = 0; j < ns; ++j) {
        const double* mj = &mc[static_cast<size_t>(j) * nv * nv];
        for (int i = 0; i < ns; ++i) {
          double cf = -a_dt / g.jac[i] * kFaceSign[f] * KE(i, j);
          for (int v = 0; v < nv; ++v)
            for (int w = 0; w < nv; ++w)
              eb.a(v * ns + i, w * ns + j) += cf * mj[v * nv + w];
        }
      }

      Mat tr = E * U;
      Mat tro;
      if (role == FaceRole::Interface) {
        int eo = ms ? fc.ep : fc.em, fo = ms ? fc.fp : fc.fm;
        tro = re.e_gl[fo] * CMap(d.elem(u, eo), ns, nv);
      }
      for (int q = 0; q < nf1; ++q) {
        for (int v = 0; v < nv; ++v) ut[v] = tr(q, v);
        switch (role) {
          case FaceRole::Trace: {
            int mq = ms ? q : nf1 - 1 - q;
            const double* uh = uhat + static_cast<size_t>(idx[mq]) * nv;
            physics::hybrid_flux_jac(d.phys, uh, ut, fg.nx[q], fg.ny[q], du,
                                     duh);
            break;
          }
          case FaceRole::Interface: {
            for (int v = 0; v < nv; ++v) un[v] = tro(nf1 - 1 - q, v);
            physics::rusanov_jac(d.phys, ut, un, fg.nx[q], fg.ny[q], du, dp);
            break;
          }
          default: {  // Boundary
            fr::boundary_state(d, fc.tag, fg.x[q], fg.y[q], t, ut, un);
            physics::rusanov_jac(d.phys, ut, un, fg.nx[q], fg.ny[q], dm, dp);
            ghost_jac(d, fc.tag, dg);
            for (int v = 0; v < nv; ++v)
              for (int w = 0; w < nv; ++w) {
                double s = dm[v * nv + w];
                for (int k = 0; k < nv; ++k)
                  s += dp[v * nv + k] * dg[k * nv + w];
                du[v * nv + w] = s;
              }
            break;
          }
        }
        for (int j = 0; j < ns; ++j) {
          double ecol = E(q, j);
          if (ecol == 0.0) continue;
          for (int i = 0; i < ns; ++i) {
            double cf = a_dt / g.jac[i] * K(i, q) * fg.jf[q] * ecol;
            for (int v = 0; v < nv; ++v)
              for (int w = 0; w < nv; ++w)
                eb.a(v * ns + i, w * ns + j) += cf * du[v * nv + w];
          }
        }
        if (tracef) {
          for (int i = 0; i < ns; ++i) {
            double cf = a_dt / g.jac[i] * K(i, q) * fg.jf[q];
            for (int v = 0; v < nv; ++v)
              for (int w = 0; w < nv; ++w)
                eb.b(v * ns + i, (f_off + q) * nv + w) += cf * duh[v * nv + w];
          }
          for (int tq = 0; tq < nf1; ++tq) {
            double mj = M(tq, q) * fg.jf[q];
            for (int j = 0; j < ns; ++j) {
              double cf = mj * E(q, j);
              if (cf == 0.0) continue;
              for (int v = 0; v < nv; ++v)
                for (int w = 0; w < nv; ++w)
                  eb.c((f_off + tq) * nv + v, w * ns + j) +=
                      cf * du[v * nv + w];
            }
            for (int v = 0; v < nv; ++v)
              for (int w = 0; w < nv; ++w)
                eb.d((f_off + tq) * nv + v, (f_off + q) * nv + w) +=
                    mj * duh[v * nv + w];
          }
        }
      }
      if (tracef) f_off += nf1;
    }

    eb.alu.compute(eb.a);
    eb.ainv_b = eb.nr ? Mat(eb.alu.solve(eb.b)) : Mat::Zero(nl, 0);
  }

  if (ts.n_hat > 0) {
    std::vector<std::vector<int>> cols(ts.n_hat);
    for (const ElementBlocks& eb : jac.blocks)
      for (int tq : eb.gmap)
        for (int tq2 : eb.gmap) cols[tq].push_back(tq2);
    for (auto& cr : cols) {
      std::sort(cr.begin(), cr.end());
      cr.erase(std::unique(cr.begin(), cr.end()), cr.end());
    }
    jac.lmat = linalg::BlockCsr::from_pattern(ts.n_hat, nv, cols);
    for (const ElementBlocks& eb : jac.blocks) {
      if (!eb.nr) continue;
      Mat lk = eb.d - eb.c * eb.ainv_b;
      int nt = static_cast<int>(eb.gmap.size());
      for (int tq = 0; tq < nt; ++tq)
        for (int tq2 = 0; tq2 < nt; ++tq2) {
          double* blk = jac.lmat.block(eb.gmap[tq], eb.gmap[tq2]);
          for (int v = 0; v < nv; ++v)
            for (int w = 0; w < nv; ++w)
              blk[v * nv + w] += lk(tq * nv + v, tq2 * nv + w);
        }
    }
    jac.prec.build(jac.lmat);
  } else {
    jac.lmat = linalg::BlockCsr();
  }
  jac.ready = true;
}

NewtonReport solve_stage(const Discretization& d, const TraceSpace& ts,
                         const double* ustar, double a_dt, double t,
                         const NewtonOptions& opt, StageJacobian& jac,
                         double* u, double* uhat) {
  int nv = d.nv(), ns = d.ns(), nl = nv * ns;
  int ni = static_cast<int>(ts.elems.size());
  int nh = ts.dof(nv);
  NewtonReport rep;
  if (ni == 0) {
    rep.converged = true;
    return rep;
  }

  std::vector<double> rfull(d.dof()), gvec(nh), rho(static_cast<size_t>(ni) * nl);
  std::vector<double> y(rho.size()), tvec(nh), dhat(nh);
  double norm0 = -1.0;

  for (int it = 0; it <= opt.max_iters; ++it) {
    {
      ScopedTimer tm(opt.times, &PhaseTimes::residual);
      hfr_residual(d, ts, u, uhat, t, rfull.data());
    }
    {
      ScopedTimer tm(opt.times, &PhaseTimes::transmission);
      transmission_residual(d, ts, u, uhat, t, gvec.data());
    }
    double nn = 0.0;
    for (int si = 0; si < ni; ++si) {
      const double* ul = d.elem(u, ts.elems[si]);
      const double* sl = d.elem(ustar, ts.elems[si]);
      const double* rl = d.elem(rfull.data(), ts.elems[si]);
      double* rh = &rho[static_cast<size_t>(si) * nl];
      for (int l = 0; l < nl; ++l) {
        rh[l] = ul[l] - sl[l] - a_dt * rl[l];
        nn += rh[l] * rh[l];
      }
    }
    for (int k = 0; k < nh; ++k) nn += gvec[k] * gvec[k];
    nn = std::sqrt(nn);
    rep.residual = nn;
    rep.iters = it;
    rep.history.push_back(nn);
    if (norm0 < 0.0) norm0 = nn;
    if (nn <= std::max(opt.atol, opt.rtol * norm0)) {
      rep.converged = true;
      break;
    }
    if (it == opt.max_iters) break;

    if (opt.refresh || !jac.ready || jac.a_dt != a_dt ||
        static_cast<int>(jac.blocks.size()) != ni) {
      ScopedTimer tm(opt.times, &PhaseTimes::jacobian);
      build_stage_jacobian(d, ts, u, uhat, a_dt, t, jac);
    }

    {
      ScopedTimer tm(opt.times, &PhaseTimes::local);
      for (int si = 0; si < ni; ++si) {
        Eigen::Map<const Vec> rs(&rho[static_cast<size_t>(si) * nl], nl);
        Eigen::Map<Vec>(&y[static_cast<size_t>(si) * nl], nl) =
            jac.blocks[si].alu.solve(-rs);
      }
      for (int k = 0; k < nh; ++k) tvec[k] = -gvec[k];
      for (int si = 0; si < ni; ++si) {
        const ElementBlocks& eb = jac.blocks[si];
        if (!eb.nr) continue;
        Vec cy =
            eb.c * Eigen::Map<const Vec>(&y[static_cast<size_t>(si) * nl], nl);
        for (size_t tq = 0; tq < eb.gmap.size(); ++tq)
          for (int v = 0; v < nv; ++v)
            tvec[static_cast<size_t>(eb.gmap[tq]) * nv + v] -=
                cy(static_cast<int>(tq) * nv + v);
      }
    }

    std::fill(dhat.begin(), dhat.end(), 0.0);
    if (ts.n_hat > 0) {
      ScopedTimer tm(opt.times, &PhaseTimes::linear);
      linalg::GmresResult gr = linalg::gmres(
          nh,
          [&](const double* xv, double* yv) { jac.lmat.matvec(xv, yv); },
          [&](const double* xv, double* yv) { jac.prec.apply(xv, yv); },
          tvec.data(), dhat.data(), opt.gmres);
      rep.gmres_iters += gr.iters;
    }

    {
      ScopedTimer tm(opt.times, &PhaseTimes::local);
      for (int si = 0; si < ni; ++si) {
        const ElementBlocks& eb = jac.blocks[si];
        Eigen::Map<const Vec> ys(&y[static_cast<size_t>(si) * nl], nl);
        double* ul = d.elem(u, ts.elems[si]);
        if (eb.nr) {
          Vec dh(eb.nr);
          for (size_t tq = 0; tq < eb.gmap.size(); ++tq)
            for (int v = 0; v < nv; ++v)
              dh(static_cast<int>(tq) * nv + v) =
                  dhat[static_cast<size_t>(eb.gmap[tq]) * nv + v];
          Vec duv = ys - eb.ainv_b * dh;
          for (int l = 0; l < nl; ++l) ul[l] += duv(l);
        } else {
          for (int l = 0; l < nl; ++l) ul[l] += ys(l);
        }
      }
      for (int k = 0; k < nh; ++k) uhat[k] += dhat[k];
    }
  }
  return rep;
}

NewtonReport solve_stage_unhybridized(const Discretization& d,
                                      const partition::Partition& part,
                                      const double* ustar, double a_dt,
                                      double t, const NewtonOptions& opt,
                                      double* u) {
  const auto& re = *d.re;
  const auto& geo = *d.geo;
  const auto& msh = *d.msh;
  int nv = d.nv(), ns = re.ns, nf1 = re.nf1, nl = nv * ns;

  std::vector<int> slot(msh.n_elems(), -1), elems;
  for (int e = 0; e < msh.n_elems(); ++e)
    if (part.implicit[e]) {
      slot[e] = static_cast<int>(elems.size());
      elems.push_back(e);
    }
  int ni = static_cast<int>(elems.size());
  NewtonReport rep;
  if (ni == 0) {
    rep.converged = true;
    return rep;
  }

  std::vector<std::vector<int>> cols(ni);
  for (int si = 0; si < ni; ++si) cols[si].push_back(si);
  for (int fid : part.implicit_faces) {
    const mesh::Face& fc = msh.faces[fid];
    cols[slot[fc.em]].push_back(slot[fc.ep]);
    cols[slot[fc.ep]].push_back(slot[fc.em]);
  }
  for (auto& cr : cols) {
    std::sort(cr.begin(), cr.end());
    cr.erase(std::unique(cr.begin(), cr.end()), cr.end());
  }
  linalg::BlockCsr jmat = linalg::BlockCsr::from_pattern(ni, nl, cols);
  linalg::BlockJacobi prec;
  bool assembled = false;

  std::vector<double> rfull(d.dof()), rho(static_cast<size_t>(ni) * nl),
      delta(rho.size());
  double norm0 = -1.0;

  for (int it = 0; it <= opt.max_iters; ++it) {
    {
      ScopedTimer tm(opt.times, &PhaseTimes::residual);
      fr::fr_residual(d, u, t, &part.implicit, rfull.data());
    }
    double nn = 0.0;
    for (int si = 0; si < ni; ++si) {
      const double* ul = d.elem(u, elems[si]);
      const double* sl = d.elem(ustar, elems[si]);
      const double* rl = d.elem(rfull.data(), elems[si]);
      double* rh = &rho[static_cast<size_t>(si) * nl];
      for (int l = 0; l < nl; ++l) {
        rh[l] = ul[l] - sl[l] - a_dt * rl[l];
        nn += rh[l] * rh[l];
      }
    }
    nn = std::sqrt(nn);
    rep.residual = nn;
    rep.iters = it;
    rep.history.push_back(nn);
    if (norm0 < 0.0) norm0 = nn;
    if (nn <= std::max(opt.atol, opt.rtol * norm0)) {
      rep.converged = true;
      break;
    }
    if (it == opt.max_iters) break;

    if (opt.refresh || !assembled) {
      ScopedTimer tm(opt.times, &PhaseTimes::jacobian);
      jmat.set_zero();
#pragma omp parallel for schedule(static)
      for (int si = 0; si < ni; ++si) {
        int e = elems[si];
        const auto& g = geo[e];
        const double* ue = d.elem(u, e);
        CMap U(ue, ns, nv);
        double* db = jmat.block(si, si);
        auto add = [&](double* blk, int rl_, int cl, double vv) {
          blk[static_cast<size_t>(rl_) * nl + cl] += vv;
        };
        for (int l = 0; l < nl; ++l) add(db, l, l, 1.0);

        std::vector<double> mxi, meta;
        contravariant_jacs(d, e, ue, mxi, meta);
        for (int j = 0; j < ns; ++j) {
          const double* mx = &mxi[static_cast<size_t>(j) * nv * nv];
          const double* me = &meta[static_cast<size_t>(j) * nv * nv];
          for (int i = 0; i < ns; ++i) {
            double cx = a_dt / g.jac[i] * re.d_xi(i, j);
            double ce = a_dt / g.jac[i] * re.d_eta(i, j);
            for (int v = 0; v < nv; ++v)
              for (int w = 0; w < nv; ++w)
                add(db, v * ns + i, w * ns + j,
                    cx * mx[v * nv + w] + ce * me[v * nv + w]);
          }
        }

        double ut[kMaxVars], un[kMaxVars];
        double du[kMaxVars * kMaxVars], dm[kMaxVars * kMaxVars],
            dp[kMaxVars * kMaxVars], dg[kMaxVars * kMaxVars];
        for (int f = 0; f < 4; ++f) {
          int fid = msh.elem_face[e][f];
          const mesh::Face& fc = msh.faces[fid];
          const Mat& E = re.e_gl[f];
          const Mat& K = re.k_gl[f];
          const mesh::FaceGeom& fg = g.fgl[f];

          Mat KE = K * E;
          const std::vector<double>& mc = kFaceComp[f] ? meta : mxi;
          for (int j = 0; j < ns; ++j) {
            const double* mj = &mc[static_cast<size_t>(j) * nv * nv];
            for (int i = 0; i < ns; ++i) {
              double cf = -a_dt / g.jac[i] * kFaceSign[f] * KE(i, j);
              for (int v = 0; v < nv; ++v)
                for (int w = 0; w < nv; ++w)
                  add(db, v * ns + i, w * ns + j, cf * mj[v * nv + w]);
            }
          }

          Mat tr = E * U;
          int eo = -1, fo = -1;
          Mat tro;
          double* ob = nullptr;
          if (!fc.boundary()) {
            bool ms = minus_side(fc, e, f);
            eo = ms ? fc.ep : fc.em;
            fo = ms ? fc.fp : fc.fm;
            tro = re.e_gl[fo] * CMap(d.elem(u, eo), ns, nv);
            if (part.implicit[eo]) ob = jmat.block(si, slot[eo]);
          }
          for (int q = 0; q < nf1; ++q) {
            for (int v = 0; v < nv; ++v) ut[v] = tr(q, v);
            if (fc.boundary()) {
              fr::boundary_state(d, fc.tag, fg.x[q], fg.y[q], t, ut, un);
              physics::rusanov_jac(d.phys, ut, un, fg.nx[q], fg.ny[q], dm, dp);
              ghost_jac(d, fc.tag, dg);
              for (int v = 0; v < nv; ++v)
                for (int w = 0; w < nv; ++w) {
                  double s = dm[v * nv + w];
                  for (int k = 0; k < nv; ++k)
                    s += dp[v * nv + k] * dg[k * nv + w];
                  du[v * nv + w] = s;
                }
            } else {
              for (int v = 0; v < nv; ++v) un[v] = tro(nf1 - 1 - q, v);
              physics::rusanov_jac(d.phys, ut, un, fg.nx[q], fg.ny[q], du, dp);
            }
            for (int j = 0; j < ns; ++j) {
              double ecol = E(q, j);
              double ecoln = ob ? tro.rows() ? re.e_gl[fo](nf1 - 1 - q, j) : 0.0
                                : 0.0;
              for (int i = 0; i < ns; ++i) {
                double base = a_dt / g.jac[i] * K(i, q) * fg.jf[q];
                if (ecol != 0.0) {
                  double cf = base * ecol;
                  for (int v = 0; v < nv; ++v)
                    for (int w = 0; w < nv; ++w)
                      add(db, v * ns + i, w * ns + j, cf * du[v * nv + w]);
                }
                if (ob && ecoln != 0.0) {
                  double cf = base * ecoln;
                  for (int v = 0; v < nv; ++v)
                    for (int w = 0; w < nv; ++w)
                      add(ob, v * ns + i, w * ns + j, cf * dp[v * nv + w]);
                }
              }
            }
          }
        }
      }
      prec.build(jmat);
      assembled = true;
    }

    for (double& x : rho) x = -x;
    std::fill(delta.begin(), delta.end(), 0.0);
    linalg::GmresResult gr;
    {
      ScopedTimer tm(opt.times, &PhaseTimes::linear);
      gr = linalg::gmres(
          ni * nl, [&](const double* xv, double* yv) { jmat.matvec(xv, yv); },
          [&](const double* xv, double* yv) { prec.apply(xv, yv); }, rho.data(),
          delta.data(), opt.gmres);
    }
    rep.gmres_iters += gr.iters;

    for (int si = 0; si < ni; ++si) {
      double* ul = d.elem(u, elems[si]);
      const double* dl = &delta[static_cast<size_t>(si) * nl];
      for (int l = 0; l < nl; ++l) ul[l] += dl[l];
    }
  }
  return rep;
}

}  // namespace hfr
}  // namespace hyflux
