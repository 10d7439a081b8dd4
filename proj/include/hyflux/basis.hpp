#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

namespace hyflux {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace basis {

constexpr int kMaxOrder = 9;

struct NodeSet1D {
  std::vector<double> x;  // ascending in [-1, 1]
  std::vector<double> w;
  int n() const { return static_cast<int>(x.size()); }
};

// n-point rules. gauss_legendre needs n >= 1, gauss_lobatto n >= 2.
NodeSet1D gauss_legendre(int n);
NodeSet1D gauss_lobatto(int n);

double legendre(int n, double x);
double legendre_deriv(int n, double x);

// Lagrange basis on `nodes`, all values (or first derivatives) at x.
std::vector<double> lagrange_values(const std::vector<double>& nodes, double x);
std::vector<double> lagrange_derivs(const std::vector<double>& nodes, double x);

// Derivative of the DG-recovering correction function of degree p+1.
// g_left(-1) = 1, g_left(+1) = 0 and g_left is orthogonal to P_{p-1};
// g_right mirrors it.
double correction_deriv_left(int p, double x);
double correction_deriv_right(int p, double x);

enum class Scheme { FR, HFR, EFR };
enum class FaceFamily { GL, GLL };

// Tensor-product reference quad [-1,1]^2. Solution points are Gauss-Legendre
// in both directions, index i = iy*(p+1) + ix. Local faces are numbered
// counterclockwise: 0 bottom (eta=-1), 1 right (xi=+1), 2 top (eta=+1),
// 3 left (xi=-1), and flux points on each face follow the counterclockwise
// traversal, so a conforming neighbour sees them in reversed order.
struct RefElement {
  int p = 0;
  Scheme scheme = Scheme::HFR;
  int ns = 0;   // (p+1)^2
  int nf1 = 0;  // p+1 flux points per face

  NodeSet1D gl;          // 1D solution nodes
  NodeSet1D gll;         // EFR trace nodes (empty otherwise)
  std::vector<double> wvol;  // ns tensor weights

  Mat d_xi, d_eta;  // ns x ns

  std::array<Mat, 4> e_gl;   // nf1 x ns, interpolation to GL face points
  std::array<Mat, 4> k_gl;   // ns x nf1, correction divergence at solution pts
  std::array<Mat, 4> e_gll;  // EFR variants
  std::array<Mat, 4> k_gll;
  Mat mass_gl;    // nf1 x nf1 exact face Gram matrix (diagonal for GL)
  Mat mass_gll;   // full for GLL
  Mat p_gl2gll;   // nf1 x nf1, nodal GL face values -> GLL face values

  Mat vand;                   // ns x ns, orthonormal Legendre modes at solution pts
  Mat vand_inv;
  std::vector<int> mode_eta;  // per mode column: sum of leading-term exponents

  const Mat& e_face(int f, FaceFamily fam) const {
    return fam == FaceFamily::GL ? e_gl[f] : e_gll[f];
  }
  const Mat& k_face(int f, FaceFamily fam) const {
    return fam == FaceFamily::GL ? k_gl[f] : k_gll[f];
  }
  const Mat& face_mass(FaceFamily fam) const {
    return fam == FaceFamily::GL ? mass_gl : mass_gll;
  }
  const NodeSet1D& face_nodes(FaceFamily fam) const {
    return fam == FaceFamily::GL ? gl : gll;
  }
  // Reference coordinates of flux point m on local face f.
  std::array<double, 2> face_point(int f, int m, FaceFamily fam) const;
  // Constant outward reference normal of local face f.
  static std::array<double, 2> face_normal(int f);
};

RefElement build_reference_element(int p, Scheme scheme);

}  // namespace basis
}  // namespace hyflux
