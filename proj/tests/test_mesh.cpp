#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "hyflux/mesh.hpp"

using namespace hyflux;
using namespace hyflux::mesh;

namespace {

// Row heights of a tensor-product grid read back from the node coordinates.
std::vector<double> row_heights(const Mesh& m, int nx) {
  std::vector<double> h;
  int nrow = m.n_elems() / nx;
  for (int j = 0; j < nrow; ++j) {
    double y0 = m.xy[2 * (j * (nx + 1)) + 1];
    double y1 = m.xy[2 * ((j + 1) * (nx + 1)) + 1];
    h.push_back(y1 - y0);
  }
  return h;
}

}  // namespace

TEST_CASE("uniform periodic mesh: counts and hand-checked 2x2 connectivity") {
  Mesh m = generate_uniform_periodic(2, 2, 1.0, 1.0);
  CHECK(m.n_elems() == 4);
  CHECK(m.n_nodes() == 9);
  CHECK(m.faces.size() == 8);  // 2 * nx * ny, all interior
  for (auto& f : m.faces) CHECK(!f.boundary());

  // Element ids are row-major: e = j*nx + i.
  CHECK(m.elem_face[0][1] == m.elem_face[1][3]);  // shared vertical face
  CHECK(m.elem_face[0][3] == m.elem_face[1][1]);  // wrap in x
  CHECK(m.elem_face[0][2] == m.elem_face[2][0]);  // shared horizontal face
  CHECK(m.elem_face[0][0] == m.elem_face[2][2]);  // wrap in y

  const Face& f = m.faces[m.elem_face[0][1]];
  CHECK(f.em == 0);
  CHECK(f.fm == 1);
  CHECK(f.ep == 1);
  CHECK(f.fp == 3);
  CHECK(f.tag == -1);

  Mesh m43 = generate_uniform_periodic(4, 3, 2.0, 1.5);
  CHECK(m43.n_elems() == 12);
  CHECK(m43.faces.size() == 24);
}

TEST_CASE("uniform mesh metric terms match the affine map") {
  Mesh m = generate_uniform_periodic(4, 3, 2.0, 1.5);
  auto re = basis::build_reference_element(3, basis::Scheme::HFR);
  auto geo = compute_geometric_factors(m, re);
  double hx = 0.5, hy = 0.5;
  for (auto& g : geo) {
    for (int i = 0; i < re.ns; ++i) {
      CHECK(g.jac[i] == doctest::Approx(hx * hy / 4.0).epsilon(1e-14));
      CHECK(g.adj[4 * i + 0] == doctest::Approx(hy / 2.0));
      CHECK(g.adj[4 * i + 1] == doctest::Approx(0.0).scale(1.0));
      CHECK(g.adj[4 * i + 2] == doctest::Approx(0.0).scale(1.0));
      CHECK(g.adj[4 * i + 3] == doctest::Approx(hx / 2.0));
    }
    CHECK(g.area == doctest::Approx(hx * hy).epsilon(1e-14));
    CHECK(g.perimeter == doctest::Approx(2.0 * (hx + hy)).epsilon(1e-14));
    const double nref[4][2] = {{0, -1}, {1, 0}, {0, 1}, {-1, 0}};
    const double jref[4] = {hx / 2, hy / 2, hx / 2, hy / 2};
    for (int f = 0; f < 4; ++f)
      for (int q = 0; q < re.nf1; ++q) {
        CHECK(g.fgl[f].jf[q] == doctest::Approx(jref[f]).epsilon(1e-14));
        CHECK(g.fgl[f].nx[q] == doctest::Approx(nref[f][0]).scale(1.0));
        CHECK(g.fgl[f].ny[q] == doctest::Approx(nref[f][1]).scale(1.0));
      }
  }
}

TEST_CASE("plus side traverses interior faces in reversed flux-point order") {
  double lx = 2.0, ly = 1.5;
  Mesh m = generate_uniform_periodic(4, 3, lx, ly);
  auto re = basis::build_reference_element(4, basis::Scheme::HFR);
  auto geo = compute_geometric_factors(m, re);
  auto near_multiple = [](double d, double period) {
    double r = std::remainder(d, period);
    return std::abs(r) < 1e-12;
  };
  for (auto& f : m.faces) {
    const FaceGeom& gm = geo[f.em].fgl[f.fm];
    const FaceGeom& gp = geo[f.ep].fgl[f.fp];
    for (int q = 0; q < re.nf1; ++q) {
      int mslot = re.nf1 - 1 - q;
      CHECK(near_multiple(gm.x[mslot] - gp.x[q], lx));
      CHECK(near_multiple(gm.y[mslot] - gp.y[q], ly));
      // opposite outward normals
      CHECK(gm.nx[mslot] == doctest::Approx(-gp.nx[q]).scale(1.0));
      CHECK(gm.ny[mslot] == doctest::Approx(-gp.ny[q]).scale(1.0));
    }
  }
}

TEST_CASE("stretched band replaces two central rows of the 24-column grid") {
  Mesh m = generate_stretched_band(24, 20.0, 7, 2.0);
  CHECK(m.n_elems() == 24 * 29);
  auto h = row_heights(m, 24);
  REQUIRE(static_cast<int>(h.size()) == 29);

  double hu = 20.0 / 24.0;
  const double prop[7] = {8, 4, 2, 1, 2, 4, 8};
  for (int j = 0; j < 11; ++j) {
    CHECK(h[j] == doctest::Approx(hu).epsilon(1e-13));
    CHECK(h[28 - j] == doctest::Approx(hu).epsilon(1e-13));
  }
  for (int k = 0; k < 7; ++k) {
    double expect = 2.0 * hu * prop[k] / 29.0;
    CHECK(h[11 + k] == doctest::Approx(expect).epsilon(1e-13));
    CHECK(h[11 + k] < hu);
    CHECK(h[11 + k] == doctest::Approx(h[17 - k]).epsilon(1e-14));  // symmetric
  }
  double total = 0.0;
  for (double v : h) total += v;
  CHECK(total == doctest::Approx(20.0).epsilon(1e-14));

  // The band opens a clear gap in area/perimeter between its elements and
  // the uniform region.
  auto re = basis::build_reference_element(2, basis::Scheme::HFR);
  auto geo = compute_geometric_factors(m, re);
  for (int j = 0; j < 29; ++j)
    for (int i = 0; i < 24; ++i) {
      double es = geo[j * 24 + i].area / geo[j * 24 + i].perimeter;
      if (j >= 11 && j <= 17)
        CHECK(es < 0.149);
      else
        CHECK(es == doctest::Approx(hu / 4.0).epsilon(1e-12));
    }
}

TEST_CASE("stretched band handles other sizes and rejects bad input") {
  // n_base=10, ratio=1.5: proportions (1.5,1,1.5)/4, two rows replaced.
  Mesh a = generate_stretched_band(10, 1.0, 3, 1.5);
  auto ha = row_heights(a, 10);
  REQUIRE(static_cast<int>(ha.size()) == 11);
  CHECK(ha[4] == doctest::Approx(2.0 * 0.1 * 1.5 / 4.0));
  CHECK(ha[5] == doctest::Approx(2.0 * 0.1 * 1.0 / 4.0));

  // odd n_base keeps odd replaced-row counts
  Mesh b = generate_stretched_band(9, 1.0, 3, 2.0);
  auto hb = row_heights(b, 9);
  REQUIRE(static_cast<int>(hb.size()) == 11);
  double hu = 1.0 / 9.0;
  CHECK(hb[4] == doctest::Approx(hu * 2.0 / 5.0));
  CHECK(hb[5] == doctest::Approx(hu * 1.0 / 5.0));

  CHECK_THROWS(generate_stretched_band(3, 1.0, 3, 2.0));
  CHECK_THROWS(generate_stretched_band(10, 1.0, 4, 2.0));   // even layers
  CHECK_THROWS(generate_stretched_band(10, 1.0, 3, 0.5));   // ratio < 1
}

TEST_CASE("annulus mesh: counts, tags, positive metric, radial wall normals") {
  Mesh m = generate_annulus(8, 4, 0.5, 10.0);
  CHECK(m.map_degree == 2);
  CHECK(m.n_elems() == 32);
  CHECK(m.n_nodes() == 16 * 9);
  CHECK(m.faces.size() == 72);  // 56 interior + 16 boundary

  int wall = m.tag_id("wall"), far = m.tag_id("farfield");
  REQUIRE(wall >= 0);
  REQUIRE(far >= 0);
  int nwall = 0, nfar = 0, ninterior = 0;
  for (auto& f : m.faces) {
    if (!f.boundary()) ++ninterior;
    else if (f.tag == wall) ++nwall;
    else if (f.tag == far) ++nfar;
  }
  CHECK(nwall == 8);
  CHECK(nfar == 8);
  CHECK(ninterior == 56);

  auto re = basis::build_reference_element(3, basis::Scheme::HFR);
  auto geo = compute_geometric_factors(m, re);  // throws on inverted elements
  double area = 0.0;
  for (auto& g : geo) area += g.area;
  double exact = M_PI * (10.0 * 10.0 - 0.5 * 0.5);
  CHECK(std::abs(area - exact) / exact < 5e-3);

  // quadratic boundary interpolation converges: quadruple the resolution and
  // the area defect should drop by far more than the factor-8 gate below
  Mesh m2 = generate_annulus(16, 8, 0.5, 10.0);
  auto geo2 = compute_geometric_factors(m2, basis::build_reference_element(2, basis::Scheme::HFR));
  double area2 = 0.0;
  for (auto& g : geo2) area2 += g.area;
  CHECK(std::abs(area2 - exact) < std::abs(area - exact) / 8.0);

  // wall faces: outward normal of the adjacent element points toward the axis
  for (size_t fi = 0; fi < m.faces.size(); ++fi) {
    const Face& f = m.faces[fi];
    if (f.tag != wall) continue;
    const FaceGeom& fg = geo[f.em].fgl[f.fm];
    for (int q = 0; q < re.nf1; ++q) {
      double r = std::hypot(fg.x[q], fg.y[q]);
      double ndotr = (fg.nx[q] * fg.x[q] + fg.ny[q] * fg.y[q]) / r;
      CHECK(ndotr < -0.95);
      CHECK(r == doctest::Approx(0.5).epsilon(0.02));
    }
  }
}

TEST_CASE("biquadratic map reproduces an analytic quadratic geometry") {
  // x = xi + 0.1 eta^2, y = eta + 0.05 xi^2 is exactly representable, so the
  // computed metric must match J = 1 - 0.02 xi eta to rounding.
  auto X = [](double xi, double eta) { return xi + 0.1 * eta * eta; };
  auto Y = [](double xi, double eta) { return eta + 0.05 * xi * xi; };
  const double rp[9][2] = {{-1, -1}, {1, -1}, {1, 1},  {-1, 1}, {0, -1},
                           {1, 0},   {0, 1},  {-1, 0}, {0, 0}};
  Mesh m;
  m.map_degree = 2;
  for (auto& p : rp) {
    m.xy.push_back(X(p[0], p[1]));
    m.xy.push_back(Y(p[0], p[1]));
  }
  m.conn = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  m.tag_names = {"all"};
  m.tag_faces = {{{0, 1}, {1, 2}, {2, 3}, {3, 0}}};
  finalize(m);
  REQUIRE(m.faces.size() == 4);

  auto re = basis::build_reference_element(4, basis::Scheme::HFR);
  auto geo = compute_geometric_factors(m, re);
  const auto& g = geo[0];
  int n1 = re.p + 1;
  for (int iy = 0; iy < n1; ++iy)
    for (int ix = 0; ix < n1; ++ix) {
      double xi = re.gl.x[ix], eta = re.gl.x[iy];
      int i = iy * n1 + ix;
      CHECK(g.jac[i] == doctest::Approx(1.0 - 0.02 * xi * eta).epsilon(1e-14));
      CHECK(g.adj[4 * i + 0] == doctest::Approx(1.0));           // y_eta
      CHECK(g.adj[4 * i + 1] == doctest::Approx(-0.2 * eta).scale(1.0));
      CHECK(g.adj[4 * i + 2] == doctest::Approx(-0.1 * xi).scale(1.0));
      CHECK(g.adj[4 * i + 3] == doctest::Approx(1.0));           // x_xi
      CHECK(g.x[i] == doctest::Approx(X(xi, eta)).epsilon(1e-14));
      CHECK(g.y[i] == doctest::Approx(Y(xi, eta)).epsilon(1e-14));
    }
  // wvol integrates the degree-2 jacobian exactly
  CHECK(g.area == doctest::Approx(4.0).epsilon(1e-13));

  // face 0 (eta = -1): scaled normal (y_xi, -x_xi) = (0.1 xi, -1)
  for (int q = 0; q < re.nf1; ++q) {
    auto pt = re.face_point(0, q, basis::FaceFamily::GL);
    double xi = pt[0];
    double jf = std::hypot(0.1 * xi, 1.0);
    CHECK(g.fgl[0].jf[q] == doctest::Approx(jf).epsilon(1e-14));
    CHECK(g.fgl[0].nx[q] == doctest::Approx(0.1 * xi / jf).scale(1.0));
    CHECK(g.fgl[0].ny[q] == doctest::Approx(-1.0 / jf));
    CHECK(g.fgl[0].x[q] == doctest::Approx(X(xi, -1.0)));
    CHECK(g.fgl[0].y[q] == doctest::Approx(Y(xi, -1.0)));
  }
  // face 3 (xi = -1): scaled normal (-y_eta, x_eta) = (-1, 0.2 eta)
  for (int q = 0; q < re.nf1; ++q) {
    auto pt = re.face_point(3, q, basis::FaceFamily::GL);
    double eta = pt[1];
    double jf = std::hypot(1.0, 0.2 * eta);
    CHECK(g.fgl[3].jf[q] == doctest::Approx(jf).epsilon(1e-14));
    CHECK(g.fgl[3].nx[q] == doctest::Approx(-1.0 / jf));
    CHECK(g.fgl[3].ny[q] == doctest::Approx(0.2 * eta / jf).scale(1.0));
  }
}

TEST_CASE("inverted element is reported") {
  Mesh m;
  m.map_degree = 1;
  m.xy = {0, 0, 1, 0, 1, 1, 0, 1};
  m.conn = {0, 3, 2, 1};  // clockwise: negative jacobian
  m.tag_names = {"all"};
  m.tag_faces = {{{0, 3}, {3, 2}, {2, 1}, {1, 0}}};
  finalize(m);
  auto re = basis::build_reference_element(1, basis::Scheme::HFR);
  CHECK_THROWS_WITH_AS(compute_geometric_factors(m, re),
                       "mesh: nonpositive jacobian in element 0",
                       std::runtime_error);
}

TEST_CASE("mesh file round-trip preserves everything") {
  Mesh a = generate_stretched_band(8, 1.0, 3, 1.5);
  const char* path = "test_mesh_roundtrip.tmp";
  write_mesh(a, path);
  Mesh b = import_mesh(path);
  std::remove(path);

  REQUIRE(b.n_nodes() == a.n_nodes());
  REQUIRE(b.n_elems() == a.n_elems());
  CHECK(b.map_degree == a.map_degree);
  for (size_t i = 0; i < a.xy.size(); ++i) CHECK(b.xy[i] == a.xy[i]);
  CHECK(b.conn == a.conn);
  CHECK(b.tag_names == a.tag_names);
  CHECK(b.periodic_tags == a.periodic_tags);
  REQUIRE(b.faces.size() == a.faces.size());
  for (size_t i = 0; i < a.faces.size(); ++i) {
    CHECK(b.faces[i].em == a.faces[i].em);
    CHECK(b.faces[i].fm == a.faces[i].fm);
    CHECK(b.faces[i].ep == a.faces[i].ep);
    CHECK(b.faces[i].fp == a.faces[i].fp);
    CHECK(b.faces[i].tag == a.faces[i].tag);
  }
}

TEST_CASE("import rejects malformed files") {
  auto write_file = [](const char* path, const char* text) {
    std::ofstream out(path);
    out << text;
  };
  const char* path = "test_mesh_bad.tmp";

  write_file(path, "not-a-mesh\n");
  CHECK_THROWS(import_mesh(path));

  write_file(path, "hyflux-mesh v1\n4 1 1\n0 0\n1 0\n1 1\n0 1\n0 1 2 9\n");
  CHECK_THROWS(import_mesh(path));  // node index out of range

  write_file(path,
             "hyflux-mesh v1\n4 1 1\n0 0\n1 0\n1 1\n0 1\n0 1 2 3\n"
             "tag all 4\n0 1\n1 2\n2 3\n3 0\nbogus\n");
  CHECK_THROWS(import_mesh(path));  // unknown keyword

  std::remove(path);
}

TEST_CASE("finalize validates tags and periodic pairings") {
  // untagged boundary face
  Mesh m;
  m.map_degree = 1;
  m.xy = {0, 0, 1, 0, 1, 1, 0, 1};
  m.conn = {0, 1, 2, 3};
  m.tag_names = {"some"};
  m.tag_faces = {{{0, 1}}};
  CHECK_THROWS_WITH_AS(finalize(m), "mesh: untagged boundary face",
                       std::runtime_error);

  // periodic sections with different face counts
  Mesh p;
  p.map_degree = 1;
  p.xy = {0, 0, 1, 0, 2, 0, 0, 1, 1, 1, 2, 1};
  p.conn = {0, 1, 4, 3, 1, 2, 5, 4};
  p.tag_names = {"xlo", "xhi", "ylo", "yhi"};
  p.tag_faces = {{{0, 3}}, {{2, 5}}, {{0, 1}, {1, 2}}, {{3, 4}, {4, 5}}};
  p.periodic_tags = {{0, 2}};  // 1 face vs 2 faces
  CHECK_THROWS_WITH_AS(finalize(p), "mesh: periodic tags differ in face count",
                       std::runtime_error);
}
