#include "hyflux/fr.hpp"

// Reference implementation used to validate the parallel kernels. It is
// deliberately structured differently: element-centric gather loops, plain
// scalar arithmetic, and the Riemann flux evaluated from each side's own
// normal (Rusanov is antisymmetric under side exchange, so the two sides
// still telescope).

namespace hyflux {
namespace fr {

namespace {

constexpr int kFaceComp[4] = {1, 0, 1, 0};
constexpr double kFaceSign[4] = {-1.0, 1.0, 1.0, -1.0};

// Trace of one variable of element e onto local face f, slot m.
double trace(const Discretization& d, const double* u, int e, int f, int v,
             int m) {
  const basis::RefElement& re = *d.re;
  const double* ue = d.elem(u, e) + static_cast<size_t>(v) * re.ns;
  double s = 0.0;
  for (int j = 0; j < re.ns; ++j) s += re.e_gl[f](m, j) * ue[j];
  return s;
}

// Identify the opposite (element, local face) of face index fidx as seen
// from element e, or eo = -1 for a boundary face.
void opposite(const mesh::Mesh& m, int fidx, int e, int f, int& eo, int& fo) {
  const mesh::Face& fc = m.faces[fidx];
  if (fc.boundary()) {
    eo = -1;
    fo = -1;
  } else if (fc.em == e && fc.fm == f) {
    eo = fc.ep;
    fo = fc.fp;
  } else {
    eo = fc.em;
    fo = fc.fm;
  }
}

}  // namespace

void fr_residual_serial(const Discretization& d, const double* u, double t,
                        const std::vector<char>* mask, double* r) {
  const basis::RefElement& re = *d.re;
  const auto& geo = *d.geo;
  const mesh::Mesh& msh = *d.msh;
  int nv = d.nv(), ns = re.ns, nf1 = re.nf1, ne = msh.n_elems();
  bool visc = d.phys.viscous();

  std::vector<double> qx, qy;
  if (visc) {
    qx.resize(d.dof());
    qy.resize(d.dof());
    br1_gradients_serial(d, u, t, nullptr, qx.data(), qy.data());
  }

  std::vector<double> ftx(static_cast<size_t>(nv) * ns), fty(ftx.size());
  std::vector<double> div(ftx.size());
  double pt[physics::kMaxVars], fx[physics::kMaxVars], fy[physics::kMaxVars];
  double um[physics::kMaxVars], uo[physics::kMaxVars];
  double fhat[physics::kMaxVars];

  for (int e = 0; e < ne; ++e) {
    if (mask && !(*mask)[e]) continue;
    const double* ue = d.elem(u, e);
    const auto& g = geo[e];
    for (int i = 0; i < ns; ++i) {
      for (int v = 0; v < nv; ++v) pt[v] = ue[v * ns + i];
      d.phys.flux(pt, fx, fy);
      if (visc) {
        const double* qxe = d.elem(qx.data(), e);
        const double* qye = d.elem(qy.data(), e);
        for (int v = 0; v < nv; ++v) {
          fx[v] -= d.phys.nu * qxe[v * ns + i];
          fy[v] -= d.phys.nu * qye[v * ns + i];
        }
      }
      for (int v = 0; v < nv; ++v) {
        ftx[v * ns + i] = g.adj[4 * i + 0] * fx[v] + g.adj[4 * i + 1] * fy[v];
        fty[v * ns + i] = g.adj[4 * i + 2] * fx[v] + g.adj[4 * i + 3] * fy[v];
      }
    }
    for (int v = 0; v < nv; ++v)
      for (int i = 0; i < ns; ++i) {
        double s = 0.0;
        for (int j = 0; j < ns; ++j)
          s += re.d_xi(i, j) * ftx[v * ns + j] + re.d_eta(i, j) * fty[v * ns + j];
        div[v * ns + i] = s;
      }

    for (int f = 0; f < 4; ++f) {
      int fidx = msh.elem_face[e][f];
      int eo, fo;
      opposite(msh, fidx, e, f, eo, fo);
      const mesh::FaceGeom& gm = g.fgl[f];
      const std::vector<double>& ft = kFaceComp[f] ? fty : ftx;
      for (int m = 0; m < nf1; ++m) {
        for (int v = 0; v < nv; ++v) um[v] = trace(d, u, e, f, v, m);
        if (eo < 0) {
          boundary_state(d, msh.faces[fidx].tag, gm.x[m], gm.y[m], t, um, uo);
        } else {
          for (int v = 0; v < nv; ++v)
            uo[v] = trace(d, u, eo, fo, v, nf1 - 1 - m);
        }
        physics::rusanov(d.phys, um, uo, gm.nx[m], gm.ny[m], fhat);
        if (visc) {
          for (int v = 0; v < nv; ++v) {
            double gxm = trace(d, qx.data(), e, f, v, m);
            double gym = trace(d, qy.data(), e, f, v, m);
            double gxo = eo < 0 ? gxm : trace(d, qx.data(), eo, fo, v, nf1 - 1 - m);
            double gyo = eo < 0 ? gym : trace(d, qy.data(), eo, fo, v, nf1 - 1 - m);
            fhat[v] -= 0.5 * d.phys.nu *
                       ((gxm + gxo) * gm.nx[m] + (gym + gyo) * gm.ny[m]);
          }
        }
        for (int v = 0; v < nv; ++v) {
          double hd = 0.0;
          const double* ftv = ft.data() + static_cast<size_t>(v) * ns;
          for (int j = 0; j < ns; ++j) hd += re.e_gl[f](m, j) * ftv[j];
          double ht = gm.jf[m] * fhat[v] - kFaceSign[f] * hd;
          for (int i = 0; i < ns; ++i)
            div[v * ns + i] += re.k_gl[f](i, m) * ht;
        }
      }
    }

    double* rel = d.elem(r, e);
    for (int v = 0; v < nv; ++v)
      for (int i = 0; i < ns; ++i)
        rel[v * ns + i] = -div[v * ns + i] / g.jac[i];
  }
}

void br1_gradients_serial(const Discretization& d, const double* u, double t,
                          const double* const* face_common, double* qx,
                          double* qy) {
  const basis::RefElement& re = *d.re;
  const auto& geo = *d.geo;
  const mesh::Mesh& msh = *d.msh;
  int nv = d.nv(), ns = re.ns, nf1 = re.nf1, ne = msh.n_elems();

  std::vector<double> dx(static_cast<size_t>(nv) * ns), dy(dx.size());
  double um[physics::kMaxVars], uo[physics::kMaxVars];

  for (int e = 0; e < ne; ++e) {
    const double* ue = d.elem(u, e);
    const auto& g = geo[e];
    // divergence of the auxiliary fluxes (adj0 u, adj2 u) and (adj1 u, adj3 u)
    for (int v = 0; v < nv; ++v)
      for (int i = 0; i < ns; ++i) {
        double sx = 0.0, sy = 0.0;
        for (int j = 0; j < ns; ++j) {
          double uj = ue[v * ns + j];
          sx += re.d_xi(i, j) * g.adj[4 * j + 0] * uj +
                re.d_eta(i, j) * g.adj[4 * j + 2] * uj;
          sy += re.d_xi(i, j) * g.adj[4 * j + 1] * uj +
                re.d_eta(i, j) * g.adj[4 * j + 3] * uj;
        }
        dx[v * ns + i] = sx;
        dy[v * ns + i] = sy;
      }

    for (int f = 0; f < 4; ++f) {
      int fidx = msh.elem_face[e][f];
      int eo, fo;
      opposite(msh, fidx, e, f, eo, fo);
      bool minus_side = msh.faces[fidx].em == e && msh.faces[fidx].fm == f;
      const double* common = face_common ? face_common[fidx] : nullptr;
      const mesh::FaceGeom& gm = g.fgl[f];
      for (int m = 0; m < nf1; ++m) {
        double c[physics::kMaxVars];
        if (common) {
          int ms = minus_side ? m : nf1 - 1 - m;  // stored in minus order
          for (int v = 0; v < nv; ++v) c[v] = common[v * nf1 + ms];
        } else {
          for (int v = 0; v < nv; ++v) um[v] = trace(d, u, e, f, v, m);
          if (eo < 0) {
            boundary_state(d, msh.faces[fidx].tag, gm.x[m], gm.y[m], t, um, uo);
          } else {
            for (int v = 0; v < nv; ++v)
              uo[v] = trace(d, u, eo, fo, v, nf1 - 1 - m);
          }
          for (int v = 0; v < nv; ++v) c[v] = 0.5 * (um[v] + uo[v]);
        }
        for (int v = 0; v < nv; ++v) {
          double hdx = 0.0, hdy = 0.0;
          for (int j = 0; j < ns; ++j) {
            double em = re.e_gl[f](m, j);
            double uj = ue[v * ns + j];
            hdx += em * (kFaceComp[f] ? g.adj[4 * j + 2] : g.adj[4 * j + 0]) * uj;
            hdy += em * (kFaceComp[f] ? g.adj[4 * j + 3] : g.adj[4 * j + 1]) * uj;
          }
          double htx = gm.jf[m] * c[v] * gm.nx[m] - kFaceSign[f] * hdx;
          double hty = gm.jf[m] * c[v] * gm.ny[m] - kFaceSign[f] * hdy;
          for (int i = 0; i < ns; ++i) {
            dx[v * ns + i] += re.k_gl[f](i, m) * htx;
            dy[v * ns + i] += re.k_gl[f](i, m) * hty;
          }
        }
      }
    }

    double* qxe = d.elem(qx, e);
    double* qye = d.elem(qy, e);
    for (int v = 0; v < nv; ++v)
      for (int i = 0; i < ns; ++i) {
        qxe[v * ns + i] = dx[v * ns + i] / g.jac[i];
        qye[v * ns + i] = dy[v * ns + i] / g.jac[i];
      }
  }
}

}  // namespace fr
}  // namespace hyflux
