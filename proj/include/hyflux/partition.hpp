#pragma once

#include <string>
#include <vector>

#include "hyflux/mesh.hpp"

namespace hyflux {
namespace partition {

// Static implicit/explicit split of the mesh. Faces are classified once:
// interface faces couple the two regions, implicit faces carry the
// hybridized trace unknowns.
struct Partition {
  std::vector<char> implicit;  // per element
  double cutoff = 0.0;
  int n_implicit = 0;
  std::vector<int> interface_faces;  // interior, one implicit side
  std::vector<int> implicit_faces;   // interior, both sides implicit
  double implicit_fraction() const {
    return implicit.empty() ? 0.0
                            : static_cast<double>(n_implicit) / implicit.size();
  }
};

// E_s = area / perimeter per element.
std::vector<double> stiffness_indicator(const std::vector<mesh::ElemGeom>& geo);

// Element implicit iff E_s <= cutoff.
Partition flag_implicit(const mesh::Mesh& m, const std::vector<double>& es,
                        double cutoff);

// CSV histogram over log-spaced E_s bins with per-flag counts; the leading
// comment line carries the summary (counts, implicit fraction, cutoff).
void write_report(const std::string& path, const std::vector<double>& es,
                  const Partition& part, int bins = 16);

}  // namespace partition
}  // namespace hyflux
