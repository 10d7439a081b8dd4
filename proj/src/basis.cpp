#include "hyflux/basis.hpp"

#include <cmath>
#include <stdexcept>

namespace hyflux {
namespace basis {

double legendre(int n, double x) {
  if (n == 0) return 1.0;
  double pm1 = 1.0, p = x;
  for (int k = 2; k <= n; ++k) {
    double pn = ((2 * k - 1) * x * p - (k - 1) * pm1) / k;
    pm1 = p;
    p = pn;
  }
  return p;
}

double legendre_deriv(int n, double x) {
  if (n == 0) return 0.0;
  if (std::abs(std::abs(x) - 1.0) < 1e-14) {
    double sgn = (x > 0 || n % 2 == 1) ? 1.0 : -1.0;
    return sgn * 0.5 * n * (n + 1);
  }
  return n * (legendre(n - 1, x) - x * legendre(n, x)) / (1.0 - x * x);
}

NodeSet1D gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  NodeSet1D r;
  r.x.assign(n, 0.0);
  r.w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Chebyshev-like initial guess, refined by Newton on P_n.
    double x = -std::cos(M_PI * (4.0 * i + 3.0) / (4.0 * n + 2.0));
    for (int it = 0; it < 100; ++it) {
      double f = legendre(n, x);
      double dx = f / legendre_deriv(n, x);
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double dp = legendre_deriv(n, x);
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.x[i] = x;
    r.w[i] = w;
    r.x[n - 1 - i] = -x;
    r.w[n - 1 - i] = w;
  }
  if (n % 2 == 1) r.x[n / 2] = 0.0;
  return r;
}

NodeSet1D gauss_lobatto(int n) {
  if (n < 2) throw std::invalid_argument("gauss_lobatto: n must be >= 2");
  NodeSet1D r;
  r.x.assign(n, 0.0);
  r.w.assign(n, 0.0);
  int m = n - 1;
  r.x[0] = -1.0;
  r.x[m] = 1.0;
  r.w[0] = r.w[m] = 2.0 / (n * m);
  for (int i = 1; i <= m / 2; ++i) {
    // Interior nodes are the roots of P'_{n-1}; Newton using the Legendre ODE.
    double x = -std::cos(M_PI * i / m);
    for (int it = 0; it < 100; ++it) {
      double d1 = legendre_deriv(m, x);
      double d2 = (2.0 * x * d1 - m * (m + 1) * legendre(m, x)) / (1.0 - x * x);
      double dx = d1 / d2;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double pm = legendre(m, x);
    double w = 2.0 / (n * m * pm * pm);
    r.x[i] = x;
    r.w[i] = w;
    r.x[m - i] = -x;
    r.w[m - i] = w;
  }
  if (n % 2 == 1) r.x[n / 2] = 0.0;
  return r;
}

namespace {

std::vector<double> bary_weights(const std::vector<double>& nodes) {
  int n = static_cast<int>(nodes.size());
  std::vector<double> bw(n, 1.0);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      if (k != j) bw[j] /= (nodes[j] - nodes[k]);
  return bw;
}

}  // namespace

std::vector<double> lagrange_values(const std::vector<double>& nodes, double x) {
  int n = static_cast<int>(nodes.size());
  std::vector<double> v(n, 0.0);
  for (int j = 0; j < n; ++j) {
    if (std::abs(x - nodes[j]) < 1e-14) {
      v[j] = 1.0;
      return v;
    }
  }
  auto bw = bary_weights(nodes);
  double denom = 0.0;
  for (int j = 0; j < n; ++j) denom += bw[j] / (x - nodes[j]);
  for (int j = 0; j < n; ++j) v[j] = (bw[j] / (x - nodes[j])) / denom;
  return v;
}

std::vector<double> lagrange_derivs(const std::vector<double>& nodes, double x) {
  int n = static_cast<int>(nodes.size());
  auto bw = bary_weights(nodes);
  std::vector<double> d(n, 0.0);
  int at = -1;
  for (int j = 0; j < n; ++j)
    if (std::abs(x - nodes[j]) < 1e-14) at = j;
  if (at >= 0) {
    double diag = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == at) continue;
      d[j] = (bw[j] / bw[at]) / (nodes[at] - nodes[j]);
      diag -= d[j];
    }
    d[at] = diag;
    return d;
  }
  // Generic point: differentiate the barycentric form
  // l_j(x) = (bw_j/(x-x_j)) / D with D = sum_k bw_k/(x-x_k).
  double den = 0.0, dden = 0.0;
  for (int k = 0; k < n; ++k) {
    double t = bw[k] / (x - nodes[k]);
    den += t;
    dden -= t / (x - nodes[k]);
  }
  for (int j = 0; j < n; ++j) {
    double t = bw[j] / (x - nodes[j]);
    double dt = -t / (x - nodes[j]);
    d[j] = (dt * den - t * dden) / (den * den);
  }
  return d;
}

double correction_deriv_left(int p, double x) {
  double sgn = (p % 2 == 0) ? 1.0 : -1.0;
  return sgn * 0.5 * (legendre_deriv(p, x) - legendre_deriv(p + 1, x));
}

double correction_deriv_right(int p, double x) {
  return 0.5 * (legendre_deriv(p, x) + legendre_deriv(p + 1, x));
}

std::array<double, 2> RefElement::face_point(int f, int m, FaceFamily fam) const {
  const auto& fx = face_nodes(fam).x;
  int last = nf1 - 1;
  switch (f) {
    case 0: return {fx[m], -1.0};
    case 1: return {1.0, fx[m]};
    case 2: return {fx[last - m], 1.0};
    default: return {-1.0, fx[last - m]};
  }
}

std::array<double, 2> RefElement::face_normal(int f) {
  switch (f) {
    case 0: return {0.0, -1.0};
    case 1: return {1.0, 0.0};
    case 2: return {0.0, 1.0};
    default: return {-1.0, 0.0};
  }
}

namespace {

// Exact Gram matrix of the nodal Lagrange basis on `nodes`, via an
// over-integrating Gauss rule.
Mat face_gram(const std::vector<double>& nodes) {
  int n = static_cast<int>(nodes.size());
  NodeSet1D q = gauss_legendre(n + 2);
  Mat g = Mat::Zero(n, n);
  for (int k = 0; k < q.n(); ++k) {
    auto v = lagrange_values(nodes, q.x[k]);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g(i, j) += q.w[k] * v[i] * v[j];
  }
  return g;
}

// Interpolation/lifting operators for one face family.
void build_face_ops(const RefElement& re, FaceFamily fam, std::array<Mat, 4>& e,
                    std::array<Mat, 4>& k) {
  int n1 = re.p + 1;
  const auto& sol = re.gl.x;
  for (int f = 0; f < 4; ++f) {
    e[f] = Mat::Zero(re.nf1, re.ns);
    k[f] = Mat::Zero(re.ns, re.nf1);
    for (int m = 0; m < re.nf1; ++m) {
      auto pt = re.face_point(f, m, fam);
      auto lx = lagrange_values(sol, pt[0]);
      auto ly = lagrange_values(sol, pt[1]);
      for (int iy = 0; iy < n1; ++iy)
        for (int ix = 0; ix < n1; ++ix) e[f](m, iy * n1 + ix) = lx[ix] * ly[iy];
    }
    // Correction divergence: tensor product of the 1D Radau-derivative with
    // the face Lagrange basis, columns in the same CCW order as e rows.
    const auto& fnodes = re.face_nodes(fam).x;
    for (int iy = 0; iy < n1; ++iy) {
      for (int ix = 0; ix < n1; ++ix) {
        int i = iy * n1 + ix;
        double xi = sol[ix], eta = sol[iy];
        auto lxi = lagrange_values(fnodes, xi);
        auto leta = lagrange_values(fnodes, eta);
        for (int m = 0; m < re.nf1; ++m) {
          int last = re.nf1 - 1;
          double val = 0.0;
          switch (f) {
            case 0: val = -correction_deriv_left(re.p, eta) * lxi[m]; break;
            case 1: val = correction_deriv_right(re.p, xi) * leta[m]; break;
            case 2: val = correction_deriv_right(re.p, eta) * lxi[last - m]; break;
            default: val = -correction_deriv_left(re.p, xi) * leta[last - m]; break;
          }
          k[f](i, m) = val;
        }
      }
    }
  }
}

}  // namespace

RefElement build_reference_element(int p, Scheme scheme) {
  if (p < 0 || p > kMaxOrder)
    throw std::invalid_argument("build_reference_element: p out of range");
  if (scheme == Scheme::EFR && p < 1)
    throw std::invalid_argument("build_reference_element: EFR needs p >= 1");

  RefElement re;
  re.p = p;
  re.scheme = scheme;
  re.nf1 = p + 1;
  re.ns = re.nf1 * re.nf1;
  re.gl = gauss_legendre(p + 1);

  int n1 = p + 1;
  re.wvol.assign(re.ns, 0.0);
  for (int iy = 0; iy < n1; ++iy)
    for (int ix = 0; ix < n1; ++ix)
      re.wvol[iy * n1 + ix] = re.gl.w[ix] * re.gl.w[iy];

  // 1D differentiation matrix, tensorized.
  Mat d1(n1, n1);
  for (int i = 0; i < n1; ++i) {
    auto d = lagrange_derivs(re.gl.x, re.gl.x[i]);
    for (int j = 0; j < n1; ++j) d1(i, j) = d[j];
  }
  re.d_xi = Mat::Zero(re.ns, re.ns);
  re.d_eta = Mat::Zero(re.ns, re.ns);
  for (int iy = 0; iy < n1; ++iy)
    for (int ix = 0; ix < n1; ++ix)
      for (int j = 0; j < n1; ++j) {
        re.d_xi(iy * n1 + ix, iy * n1 + j) = d1(ix, j);
        re.d_eta(iy * n1 + ix, j * n1 + ix) = d1(iy, j);
      }

  build_face_ops(re, FaceFamily::GL, re.e_gl, re.k_gl);
  re.mass_gl = face_gram(re.gl.x);

  if (scheme == Scheme::EFR) {
    re.gll = gauss_lobatto(p + 1);
    build_face_ops(re, FaceFamily::GLL, re.e_gll, re.k_gll);
    re.mass_gll = face_gram(re.gll.x);
    re.p_gl2gll = Mat::Zero(re.nf1, re.nf1);
    for (int m = 0; m < re.nf1; ++m) {
      auto v = lagrange_values(re.gl.x, re.gll.x[m]);
      for (int j = 0; j < re.nf1; ++j) re.p_gl2gll(m, j) = v[j];
    }
  }

  // Orthonormal Legendre Vandermonde, mode column m = my*(p+1)+mx.
  re.vand = Mat::Zero(re.ns, re.ns);
  re.mode_eta.assign(re.ns, 0);
  for (int my = 0; my < n1; ++my)
    for (int mx = 0; mx < n1; ++mx) {
      int m = my * n1 + mx;
      re.mode_eta[m] = mx + my;
      double nx = std::sqrt(mx + 0.5), ny = std::sqrt(my + 0.5);
      for (int iy = 0; iy < n1; ++iy)
        for (int ix = 0; ix < n1; ++ix)
          re.vand(iy * n1 + ix, m) =
              nx * legendre(mx, re.gl.x[ix]) * ny * legendre(my, re.gl.x[iy]);
    }
  re.vand_inv = re.vand.inverse();
  return re;
}

}  // namespace basis
}  // namespace hyflux
