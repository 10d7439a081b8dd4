#pragma once

#include <array>
#include <string>
#include <vector>

#include "hyflux/basis.hpp"

namespace hyflux {
namespace mesh {

// Interior faces store both sides; the minus side is the element that first
// registered the face, and its counterclockwise traversal fixes the flux-point
// order. The plus side traverses the same points in reversed order.
struct Face {
  int em = -1, fm = -1;  // minus element, local face
  int ep = -1, fp = -1;  // plus element, local face (-1 on boundary)
  int tag = -1;          // boundary tag id, -1 interior
  bool boundary() const { return ep < 0; }
};

struct Mesh {
  int map_degree = 1;         // 1: bilinear (4 nodes), 2: biquadratic (9 nodes)
  std::vector<double> xy;     // 2 * n_nodes
  std::vector<int> conn;      // n_elems * nodes_per_elem, corners CCW first
  std::vector<std::string> tag_names;
  std::vector<std::vector<std::array<int, 2>>> tag_faces;  // corner node pairs
  std::vector<std::pair<int, int>> periodic_tags;          // tag id pairs

  // Built by finalize():
  std::vector<Face> faces;
  std::vector<std::array<int, 4>> elem_face;
  std::vector<int> vertex_canon;  // canonical node ids under periodic pairing

  int nodes_per_elem() const { return map_degree == 1 ? 4 : 9; }
  int n_nodes() const { return static_cast<int>(xy.size()) / 2; }
  int n_elems() const {
    return static_cast<int>(conn.size()) / nodes_per_elem();
  }
  const int* elem_nodes(int e) const { return conn.data() + e * nodes_per_elem(); }
  int tag_id(const std::string& name) const;
};

// Fully periodic nx x ny grid of bilinear quads on [0,lx] x [0,ly].
Mesh generate_uniform_periodic(int nx, int ny, double lx, double ly);

// Periodic [0,l]^2 grid of n_base columns; the central rows are replaced by a
// symmetric band of `band_layers` layers whose heights follow the geometric
// stretch `ratio` toward the centerline. The band replaces the largest
// parity-preserving number of uniform rows that keeps every layer height
// below the uniform spacing.
Mesh generate_stretched_band(int n_base, double l, int band_layers, double ratio);

// Biquadratic annulus r in [r_inner, r_outer], periodic in theta,
// tags "wall" (inner) and "farfield" (outer).
Mesh generate_annulus(int n_theta, int n_r, double r_inner, double r_outer);

Mesh import_mesh(const std::string& path);
void write_mesh(const Mesh& m, const std::string& path);

// Resolve periodic tag pairs into vertex identifications, build faces and
// elem_face, and stamp boundary tags. Generators and import both end here.
void finalize(Mesh& m);

// Per-element metric terms at solution and face flux points.
struct FaceGeom {
  std::vector<double> jf;      // nf1: physical area of a unit of face parameter
  std::vector<double> nx, ny;  // unit outward normal
  std::vector<double> x, y;
};

struct ElemGeom {
  std::vector<double> jac;  // ns
  std::vector<double> adj;  // 4*ns: (y_eta, -x_eta, -y_xi, x_xi)
  std::vector<double> x, y;
  std::array<FaceGeom, 4> fgl;
  std::array<FaceGeom, 4> fgll;  // filled only for EFR reference elements
  double area = 0.0, perimeter = 0.0;
};

std::vector<ElemGeom> compute_geometric_factors(const Mesh& m,
                                                const basis::RefElement& re);

}  // namespace mesh
}  // namespace hyflux
