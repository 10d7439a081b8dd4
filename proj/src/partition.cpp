#include "hyflux/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hyflux {
namespace partition {

std::vector<double> stiffness_indicator(const std::vector<mesh::ElemGeom>& geo) {
  std::vector<double> es(geo.size());
  for (size_t e = 0; e < geo.size(); ++e) es[e] = geo[e].area / geo[e].perimeter;
  return es;
}

Partition flag_implicit(const mesh::Mesh& m, const std::vector<double>& es,
                        double cutoff) {
  Partition p;
  p.cutoff = cutoff;
  p.implicit.resize(es.size());
  for (size_t e = 0; e < es.size(); ++e) {
    p.implicit[e] = es[e] <= cutoff ? 1 : 0;
    p.n_implicit += p.implicit[e];
  }
  for (size_t fi = 0; fi < m.faces.size(); ++fi) {
    const mesh::Face& f = m.faces[fi];
    if (f.boundary()) continue;
    int s = p.implicit[f.em] + p.implicit[f.ep];
    if (s == 2) p.implicit_faces.push_back(static_cast<int>(fi));
    if (s == 1) p.interface_faces.push_back(static_cast<int>(fi));
  }
  return p;
}

void write_report(const std::string& path, const std::vector<double>& es,
                  const Partition& part, int bins) {
  if (bins < 1) throw std::invalid_argument("write_report: bins < 1");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report: cannot open " + path);
  double lo = *std::min_element(es.begin(), es.end());
  double hi = *std::max_element(es.begin(), es.end());
  out << "# elements=" << es.size() << " implicit=" << part.n_implicit
      << " fraction=" << part.implicit_fraction() << " cutoff=" << part.cutoff
      << "\n";
  out << "bin_lo,bin_hi,count,flag_breakdown\n";
  if (hi <= lo * (1.0 + 1e-12)) {
    int ni = part.n_implicit, ne = static_cast<int>(es.size()) - ni;
    out << lo << ',' << hi << ',' << es.size() << ",implicit=" << ni
        << ";explicit=" << ne << "\n";
    return;
  }
  double llo = std::log(lo), lhi = std::log(hi);
  std::vector<int> count(bins, 0), count_imp(bins, 0);
  for (size_t e = 0; e < es.size(); ++e) {
    int b = static_cast<int>(bins * (std::log(es[e]) - llo) / (lhi - llo));
    b = std::clamp(b, 0, bins - 1);
    ++count[b];
    if (part.implicit[e]) ++count_imp[b];
  }
  for (int b = 0; b < bins; ++b) {
    double blo = std::exp(llo + (lhi - llo) * b / bins);
    double bhi = std::exp(llo + (lhi - llo) * (b + 1) / bins);
    out << blo << ',' << bhi << ',' << count[b] << ",implicit=" << count_imp[b]
        << ";explicit=" << count[b] - count_imp[b] << "\n";
  }
}

}  // namespace partition
}  // namespace hyflux
