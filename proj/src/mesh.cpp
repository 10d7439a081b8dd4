#include "hyflux/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hyflux {
namespace mesh {

namespace {

// Local faces by corner slots, CCW: bottom, right, top, left.
constexpr int kFaceCorner[4][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}};

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

double scale_of(const Mesh& m) {
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (int i = 0; i < m.n_nodes(); ++i)
    for (int d = 0; d < 2; ++d) {
      lo[d] = std::min(lo[d], m.xy[2 * i + d]);
      hi[d] = std::max(hi[d], m.xy[2 * i + d]);
    }
  return std::max(hi[0] - lo[0], hi[1] - lo[1]);
}

// Pair faces by their raw corner node ids. Periodic links are resolved
// afterwards by explicit midpoint matching; keying on canonical ids here
// would collide when a periodic direction is only two elements wide.
void build_faces(Mesh& m) {
  m.faces.clear();
  m.elem_face.assign(m.n_elems(), {-1, -1, -1, -1});
  std::map<std::pair<int, int>, int> seen;  // sorted corner pair -> face id
  for (int e = 0; e < m.n_elems(); ++e) {
    const int* en = m.elem_nodes(e);
    for (int f = 0; f < 4; ++f) {
      auto key = std::minmax(en[kFaceCorner[f][0]], en[kFaceCorner[f][1]]);
      auto it = seen.find(key);
      if (it == seen.end()) {
        Face fc;
        fc.em = e;
        fc.fm = f;
        m.elem_face[e][f] = static_cast<int>(m.faces.size());
        seen.emplace(key, static_cast<int>(m.faces.size()));
        m.faces.push_back(fc);
      } else {
        Face& fc = m.faces[it->second];
        if (fc.ep >= 0)
          throw std::runtime_error("mesh: face shared by more than two elements");
        fc.ep = e;
        fc.fp = f;
        m.elem_face[e][f] = it->second;
      }
    }
  }
}

}  // namespace

int Mesh::tag_id(const std::string& name) const {
  for (size_t i = 0; i < tag_names.size(); ++i)
    if (tag_names[i] == name) return static_cast<int>(i);
  return -1;
}

void finalize(Mesh& m) {
  int nn = m.n_nodes();
  m.vertex_canon.resize(nn);
  for (int i = 0; i < nn; ++i) m.vertex_canon[i] = i;

  build_faces(m);
  std::map<std::pair<int, int>, int> bface;  // sorted corner pair -> face id
  for (size_t fi = 0; fi < m.faces.size(); ++fi) {
    if (!m.faces[fi].boundary()) continue;
    const int* en = m.elem_nodes(m.faces[fi].em);
    bface[std::minmax(en[kFaceCorner[m.faces[fi].fm][0]],
                      en[kFaceCorner[m.faces[fi].fm][1]])] =
        static_cast<int>(fi);
  }

  // Match periodic tag sections by rigid translation: link the two boundary
  // faces into one interior face and identify their endpoints.
  std::vector<char> drop(m.faces.size(), 0);
  if (!m.periodic_tags.empty()) {
    UnionFind uf(nn);
    double tol = 1e-8 * scale_of(m);
    for (auto [ta, tb] : m.periodic_tags) {
      const auto& fa = m.tag_faces.at(ta);
      const auto& fb = m.tag_faces.at(tb);
      if (fa.size() != fb.size())
        throw std::runtime_error("mesh: periodic tags differ in face count");
      auto centroid = [&](const std::vector<std::array<int, 2>>& fl) {
        double c[2] = {0, 0};
        for (auto& f : fl)
          for (int d = 0; d < 2; ++d)
            c[d] += 0.5 * (m.xy[2 * f[0] + d] + m.xy[2 * f[1] + d]);
        c[0] /= fl.size();
        c[1] /= fl.size();
        return std::array<double, 2>{c[0], c[1]};
      };
      auto ca = centroid(fa), cb = centroid(fb);
      double off[2] = {cb[0] - ca[0], cb[1] - ca[1]};
      for (auto& f : fa) {
        double mid[2] = {0.5 * (m.xy[2 * f[0]] + m.xy[2 * f[1]]) + off[0],
                         0.5 * (m.xy[2 * f[0] + 1] + m.xy[2 * f[1] + 1]) + off[1]};
        const std::array<int, 2>* match = nullptr;
        for (auto& g : fb) {
          double gm[2] = {0.5 * (m.xy[2 * g[0]] + m.xy[2 * g[1]]),
                          0.5 * (m.xy[2 * g[0] + 1] + m.xy[2 * g[1] + 1])};
          if (std::abs(gm[0] - mid[0]) < tol && std::abs(gm[1] - mid[1]) < tol) {
            match = &g;
            break;
          }
        }
        if (!match)
          throw std::runtime_error("mesh: unmatched periodic face");
        for (int ea = 0; ea < 2; ++ea) {
          double pa[2] = {m.xy[2 * f[ea]] + off[0], m.xy[2 * f[ea] + 1] + off[1]};
          bool found = false;
          for (int eb = 0; eb < 2; ++eb) {
            if (std::abs(m.xy[2 * (*match)[eb]] - pa[0]) < tol &&
                std::abs(m.xy[2 * (*match)[eb] + 1] - pa[1]) < tol) {
              uf.unite(f[ea], (*match)[eb]);
              found = true;
            }
          }
          if (!found)
            throw std::runtime_error("mesh: periodic faces do not line up");
        }
        auto ita = bface.find(std::minmax(f[0], f[1]));
        auto itb = bface.find(std::minmax((*match)[0], (*match)[1]));
        if (ita == bface.end() || itb == bface.end())
          throw std::runtime_error("mesh: periodic tag face is not a boundary face");
        if (ita->second == itb->second)
          throw std::runtime_error("mesh: face periodic with itself");
        Face& fc = m.faces[ita->second];
        const Face& shadow = m.faces[itb->second];
        fc.ep = shadow.em;
        fc.fp = shadow.fm;
        m.elem_face[shadow.em][shadow.fm] = ita->second;
        drop[itb->second] = 1;
        bface.erase(itb);
        bface.erase(std::minmax(f[0], f[1]));
      }
    }
    for (int i = 0; i < nn; ++i) m.vertex_canon[i] = uf.find(i);
  }

  // Compact out the absorbed shadow faces.
  if (!m.periodic_tags.empty()) {
    std::vector<int> remap(m.faces.size(), -1);
    std::vector<Face> keep;
    for (size_t fi = 0; fi < m.faces.size(); ++fi)
      if (!drop[fi]) {
        remap[fi] = static_cast<int>(keep.size());
        keep.push_back(m.faces[fi]);
      }
    for (auto& ef : m.elem_face)
      for (int f = 0; f < 4; ++f) ef[f] = remap[ef[f]];
    m.faces = std::move(keep);
    bface.clear();
    for (size_t fi = 0; fi < m.faces.size(); ++fi) {
      if (!m.faces[fi].boundary()) continue;
      const int* en = m.elem_nodes(m.faces[fi].em);
      bface[std::minmax(en[kFaceCorner[m.faces[fi].fm][0]],
                        en[kFaceCorner[m.faces[fi].fm][1]])] =
          static_cast<int>(fi);
    }
  }

  // Stamp boundary tags from the non-periodic tag sections.
  std::vector<char> periodic_tag(m.tag_names.size(), 0);
  for (auto [ta, tb] : m.periodic_tags) periodic_tag[ta] = periodic_tag[tb] = 1;
  for (size_t t = 0; t < m.tag_faces.size(); ++t) {
    if (periodic_tag[t]) continue;
    for (auto& f : m.tag_faces[t]) {
      auto it = bface.find(std::minmax(f[0], f[1]));
      if (it == bface.end())
        throw std::runtime_error("mesh: tagged face is not a boundary face");
      m.faces[it->second].tag = static_cast<int>(t);
    }
  }
  for (auto& f : m.faces)
    if (f.boundary() && f.tag < 0)
      throw std::runtime_error("mesh: untagged boundary face");
}

Mesh generate_uniform_periodic(int nx, int ny, double lx, double ly) {
  if (nx < 2 || ny < 2)
    throw std::invalid_argument("generate_uniform_periodic: need nx, ny >= 2");
  Mesh m;
  m.map_degree = 1;
  auto id = [&](int i, int j) { return j * (nx + 1) + i; };
  m.xy.resize(2 * (nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      m.xy[2 * id(i, j)] = lx * i / nx;
      m.xy[2 * id(i, j) + 1] = ly * j / ny;
    }
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      m.conn.push_back(id(i, j));
      m.conn.push_back(id(i + 1, j));
      m.conn.push_back(id(i + 1, j + 1));
      m.conn.push_back(id(i, j + 1));
    }
  m.tag_names = {"xlo", "xhi", "ylo", "yhi"};
  m.tag_faces.resize(4);
  for (int j = 0; j < ny; ++j) {
    m.tag_faces[0].push_back({id(0, j), id(0, j + 1)});
    m.tag_faces[1].push_back({id(nx, j), id(nx, j + 1)});
  }
  for (int i = 0; i < nx; ++i) {
    m.tag_faces[2].push_back({id(i, 0), id(i + 1, 0)});
    m.tag_faces[3].push_back({id(i, ny), id(i + 1, ny)});
  }
  m.periodic_tags = {{0, 1}, {2, 3}};
  finalize(m);
  return m;
}

Mesh generate_stretched_band(int n_base, double l, int band_layers, double ratio) {
  if (n_base < 4) throw std::invalid_argument("stretched_band: n_base too small");
  if (band_layers < 1 || band_layers % 2 == 0)
    throw std::invalid_argument("stretched_band: band_layers must be odd");
  if (ratio < 1.0) throw std::invalid_argument("stretched_band: ratio must be >= 1");

  int half = band_layers / 2;
  std::vector<double> prop(band_layers);
  double sum = 0.0;
  for (int k = 0; k < band_layers; ++k) {
    prop[k] = std::pow(ratio, std::abs(k - half));
    sum += prop[k];
  }
  double hu = l / n_base;
  // Largest replaced-row count with the parity of n_base keeping every band
  // layer strictly below the uniform spacing.
  int replaced = -1;
  for (int r = n_base - 2; r >= 1; r -= 2) {
    if (r * prop[0] / sum < 1.0 - 1e-12) {
      replaced = r;
      break;
    }
  }
  if (replaced < 1)
    throw std::invalid_argument("stretched_band: no valid replaced-row count");

  std::vector<double> heights;
  int uni_side = (n_base - replaced) / 2;
  for (int k = 0; k < uni_side; ++k) heights.push_back(hu);
  for (int k = 0; k < band_layers; ++k)
    heights.push_back(replaced * hu * prop[k] / sum);
  for (int k = 0; k < uni_side; ++k) heights.push_back(hu);

  int nrow = static_cast<int>(heights.size());
  int nx = n_base;
  Mesh m;
  m.map_degree = 1;
  auto id = [&](int i, int j) { return j * (nx + 1) + i; };
  std::vector<double> yrow(nrow + 1, 0.0);
  for (int j = 0; j < nrow; ++j) yrow[j + 1] = yrow[j] + heights[j];
  yrow[nrow] = l;  // guard accumulation error
  m.xy.resize(2 * (nx + 1) * (nrow + 1));
  for (int j = 0; j <= nrow; ++j)
    for (int i = 0; i <= nx; ++i) {
      m.xy[2 * id(i, j)] = l * i / nx;
      m.xy[2 * id(i, j) + 1] = yrow[j];
    }
  for (int j = 0; j < nrow; ++j)
    for (int i = 0; i < nx; ++i) {
      m.conn.push_back(id(i, j));
      m.conn.push_back(id(i + 1, j));
      m.conn.push_back(id(i + 1, j + 1));
      m.conn.push_back(id(i, j + 1));
    }
  m.tag_names = {"xlo", "xhi", "ylo", "yhi"};
  m.tag_faces.resize(4);
  for (int j = 0; j < nrow; ++j) {
    m.tag_faces[0].push_back({id(0, j), id(0, j + 1)});
    m.tag_faces[1].push_back({id(nx, j), id(nx, j + 1)});
  }
  for (int i = 0; i < nx; ++i) {
    m.tag_faces[2].push_back({id(i, 0), id(i + 1, 0)});
    m.tag_faces[3].push_back({id(i, nrow), id(i + 1, nrow)});
  }
  m.periodic_tags = {{0, 1}, {2, 3}};
  finalize(m);
  return m;
}

Mesh generate_annulus(int n_theta, int n_r, double r_inner, double r_outer) {
  if (n_theta < 3 || n_r < 1) throw std::invalid_argument("annulus: too few cells");
  Mesh m;
  m.map_degree = 2;
  int na = 2 * n_theta;        // angular node count (periodic, no duplicate seam)
  int nb = 2 * n_r + 1;        // radial node count
  auto id = [&](int a, int b) { return b * na + ((a % na) + na) % na; };
  m.xy.resize(2 * na * nb);
  double grow = 1.08;          // geometric clustering toward the inner wall
  std::vector<double> rad(nb);
  double g2 = std::sqrt(grow);
  double denom = (std::pow(g2, nb - 1) - 1.0);
  for (int b = 0; b < nb; ++b)
    rad[b] = r_inner + (r_outer - r_inner) * (std::pow(g2, b) - 1.0) / denom;
  for (int b = 0; b < nb; ++b)
    for (int a = 0; a < na; ++a) {
      double th = 2.0 * M_PI * a / na;
      m.xy[2 * id(a, b)] = rad[b] * std::cos(th);
      m.xy[2 * id(a, b) + 1] = rad[b] * std::sin(th);
    }
  // xi runs radially, eta along theta, so the jacobian r * r_xi * theta_eta
  // stays positive.
  for (int j = 0; j < n_r; ++j)
    for (int i = 0; i < n_theta; ++i) {
      int a = 2 * i, b = 2 * j;
      int c[9] = {id(a, b),         id(a, b + 2),     id(a + 2, b + 2),
                  id(a + 2, b),     id(a, b + 1),     id(a + 1, b + 2),
                  id(a + 2, b + 1), id(a + 1, b),     id(a + 1, b + 1)};
      m.conn.insert(m.conn.end(), c, c + 9);
    }
  m.tag_names = {"wall", "farfield"};
  m.tag_faces.resize(2);
  for (int i = 0; i < n_theta; ++i) {
    m.tag_faces[0].push_back({id(2 * i, 0), id(2 * i + 2, 0)});
    m.tag_faces[1].push_back({id(2 * i, nb - 1), id(2 * i + 2, nb - 1)});
  }
  finalize(m);
  return m;
}

Mesh import_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("import_mesh: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "hyflux-mesh v1")
    throw std::runtime_error("import_mesh: bad header in " + path);
  Mesh m;
  int nn = 0, ne = 0;
  in >> nn >> ne >> m.map_degree;
  if (!in || nn <= 0 || ne <= 0 || (m.map_degree != 1 && m.map_degree != 2))
    throw std::runtime_error("import_mesh: bad size line");
  m.xy.resize(2 * nn);
  for (int i = 0; i < 2 * nn; ++i) in >> m.xy[i];
  int npe = m.nodes_per_elem();
  m.conn.resize(ne * npe);
  for (int i = 0; i < ne * npe; ++i) {
    in >> m.conn[i];
    if (m.conn[i] < 0 || m.conn[i] >= nn)
      throw std::runtime_error("import_mesh: node index out of range");
  }
  if (!in) throw std::runtime_error("import_mesh: truncated node/element data");
  std::string kw;
  while (in >> kw) {
    if (kw == "tag") {
      std::string name;
      int count = 0;
      in >> name >> count;
      if (!in || count < 0) throw std::runtime_error("import_mesh: bad tag line");
      m.tag_names.push_back(name);
      m.tag_faces.emplace_back();
      for (int k = 0; k < count; ++k) {
        int a, b;
        in >> a >> b;
        m.tag_faces.back().push_back({a, b});
      }
      if (!in) throw std::runtime_error("import_mesh: truncated tag section");
    } else if (kw == "periodic") {
      std::string na, nb;
      in >> na >> nb;
      int ta = m.tag_id(na), tb = m.tag_id(nb);
      if (ta < 0 || tb < 0)
        throw std::runtime_error("import_mesh: periodic names unknown");
      m.periodic_tags.emplace_back(ta, tb);
    } else {
      throw std::runtime_error("import_mesh: unexpected keyword " + kw);
    }
  }
  finalize(m);
  return m;
}

void write_mesh(const Mesh& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_mesh: cannot open " + path);
  out << "hyflux-mesh v1\n";
  out << m.n_nodes() << ' ' << m.n_elems() << ' ' << m.map_degree << '\n';
  char buf[64];
  for (int i = 0; i < m.n_nodes(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", m.xy[2 * i], m.xy[2 * i + 1]);
    out << buf;
  }
  int npe = m.nodes_per_elem();
  for (int e = 0; e < m.n_elems(); ++e) {
    for (int k = 0; k < npe; ++k) out << m.conn[e * npe + k] << (k + 1 == npe ? '\n' : ' ');
  }
  for (size_t t = 0; t < m.tag_names.size(); ++t) {
    out << "tag " << m.tag_names[t] << ' ' << m.tag_faces[t].size() << '\n';
    for (auto& f : m.tag_faces[t]) out << f[0] << ' ' << f[1] << '\n';
  }
  for (auto [ta, tb] : m.periodic_tags)
    out << "periodic " << m.tag_names[ta] << ' ' << m.tag_names[tb] << '\n';
}

namespace {

// Shape values and derivatives of the geometric map at a reference point.
void map_basis(int map_degree, double xi, double eta, double* n, double* dxi,
               double* deta) {
  if (map_degree == 1) {
    const double sx[4] = {-1, 1, 1, -1}, sy[4] = {-1, -1, 1, 1};
    for (int a = 0; a < 4; ++a) {
      n[a] = 0.25 * (1 + sx[a] * xi) * (1 + sy[a] * eta);
      dxi[a] = 0.25 * sx[a] * (1 + sy[a] * eta);
      deta[a] = 0.25 * sy[a] * (1 + sx[a] * xi);
    }
    return;
  }
  // biquadratic: tensor Lagrange on {-1,0,1}
  auto l = [](int k, double t) {
    return k == 0 ? 0.5 * t * (t - 1) : (k == 1 ? 1 - t * t : 0.5 * t * (t + 1));
  };
  auto dl = [](int k, double t) {
    return k == 0 ? t - 0.5 : (k == 1 ? -2 * t : t + 0.5);
  };
  // node order: corners CCW, edge midpoints CCW, center
  const int ax[9] = {0, 2, 2, 0, 1, 2, 1, 0, 1};
  const int ay[9] = {0, 0, 2, 2, 0, 1, 2, 1, 1};
  for (int a = 0; a < 9; ++a) {
    n[a] = l(ax[a], xi) * l(ay[a], eta);
    dxi[a] = dl(ax[a], xi) * l(ay[a], eta);
    deta[a] = l(ax[a], xi) * dl(ay[a], eta);
  }
}

struct MapEval {
  double x, y, xxi, xeta, yxi, yeta;
};

MapEval eval_map(const Mesh& m, int e, double xi, double eta) {
  double n[9], dxi[9], deta[9];
  map_basis(m.map_degree, xi, eta, n, dxi, deta);
  const int* en = m.elem_nodes(e);
  MapEval r{0, 0, 0, 0, 0, 0};
  for (int a = 0; a < m.nodes_per_elem(); ++a) {
    double X = m.xy[2 * en[a]], Y = m.xy[2 * en[a] + 1];
    r.x += n[a] * X;
    r.y += n[a] * Y;
    r.xxi += dxi[a] * X;
    r.xeta += deta[a] * X;
    r.yxi += dxi[a] * Y;
    r.yeta += deta[a] * Y;
  }
  return r;
}

void fill_face_geom(const Mesh& m, const basis::RefElement& re, int e,
                    basis::FaceFamily fam, std::array<FaceGeom, 4>& out) {
  for (int f = 0; f < 4; ++f) {
    auto& fg = out[f];
    fg.jf.resize(re.nf1);
    fg.nx.resize(re.nf1);
    fg.ny.resize(re.nf1);
    fg.x.resize(re.nf1);
    fg.y.resize(re.nf1);
    auto nref = basis::RefElement::face_normal(f);
    for (int q = 0; q < re.nf1; ++q) {
      auto pt = re.face_point(f, q, fam);
      MapEval me = eval_map(m, e, pt[0], pt[1]);
      // scaled outward normal adj^T * nref
      double vx = me.yeta * nref[0] - me.yxi * nref[1];
      double vy = -me.xeta * nref[0] + me.xxi * nref[1];
      double jf = std::hypot(vx, vy);
      fg.jf[q] = jf;
      fg.nx[q] = vx / jf;
      fg.ny[q] = vy / jf;
      fg.x[q] = me.x;
      fg.y[q] = me.y;
    }
  }
}

}  // namespace

std::vector<ElemGeom> compute_geometric_factors(const Mesh& m,
                                                const basis::RefElement& re) {
  std::vector<ElemGeom> out(m.n_elems());
  int n1 = re.p + 1;
  int bad_elem = -1;
#pragma omp parallel for schedule(static)
  for (int e = 0; e < m.n_elems(); ++e) {
    auto& g = out[e];
    g.jac.resize(re.ns);
    g.adj.resize(4 * re.ns);
    g.x.resize(re.ns);
    g.y.resize(re.ns);
    for (int iy = 0; iy < n1; ++iy)
      for (int ix = 0; ix < n1; ++ix) {
        int i = iy * n1 + ix;
        MapEval me = eval_map(m, e, re.gl.x[ix], re.gl.x[iy]);
        double j = me.xxi * me.yeta - me.xeta * me.yxi;
        if (!(j > 0.0)) {
#pragma omp critical
          bad_elem = e;
          j = 1.0;  // placeholder; reported after the loop
        }
        g.jac[i] = j;
        g.adj[4 * i + 0] = me.yeta;
        g.adj[4 * i + 1] = -me.xeta;
        g.adj[4 * i + 2] = -me.yxi;
        g.adj[4 * i + 3] = me.xxi;
        g.x[i] = me.x;
        g.y[i] = me.y;
      }
    fill_face_geom(m, re, e, basis::FaceFamily::GL, g.fgl);
    if (re.scheme == basis::Scheme::EFR)
      fill_face_geom(m, re, e, basis::FaceFamily::GLL, g.fgll);
    g.area = 0.0;
    for (int i = 0; i < re.ns; ++i) g.area += re.wvol[i] * g.jac[i];
    g.perimeter = 0.0;
    for (int f = 0; f < 4; ++f)
      for (int q = 0; q < re.nf1; ++q) g.perimeter += re.gl.w[q] * g.fgl[f].jf[q];
  }
  if (bad_elem >= 0)
    throw std::runtime_error("mesh: nonpositive jacobian in element " +
                             std::to_string(bad_elem));
  return out;
}

}  // namespace mesh
}  // namespace hyflux
