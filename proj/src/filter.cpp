#include "hyflux/filter.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace hyflux {
namespace filter {

ModalFilter build_filter(const basis::RefElement& re, double alpha, double s_f,
                         double eta_c, double dt, double t_ref) {
  double eta_max = 2.0 * re.p;
  if (alpha < 0.0 || s_f <= 0.0 || eta_c < 0.0 || eta_c > eta_max ||
      dt <= 0.0 || t_ref <= 0.0)
    throw std::invalid_argument("build_filter: parameter out of range");

  ModalFilter mf;
  mf.ns = re.ns;
  mf.alpha = alpha;
  mf.s_f = s_f;
  mf.eta_c = eta_c;
  mf.sigma.resize(re.ns);
  Vec lam_star(re.ns);
  double power = dt / t_ref;
  for (int m = 0; m < re.ns; ++m) {
    double eta = re.mode_eta[m];
    double s = 1.0;
    if (eta > eta_c)
      s = std::exp(-alpha * std::pow((eta - eta_c) / (eta_max - eta_c), s_f));
    mf.sigma[m] = s;
    lam_star[m] = std::pow(s, power);
  }
  mf.f = re.vand * lam_star.asDiagonal() * re.vand_inv;
  return mf;
}

void apply_filter(const ModalFilter& filt, int n_vars, int n_elems, double* u,
                  const std::vector<char>* region) {
  int ns = filt.ns;
#pragma omp parallel for schedule(static)
  for (int e = 0; e < n_elems; ++e) {
    if (region && !(*region)[e]) continue;
    for (int v = 0; v < n_vars; ++v) {
      Eigen::Map<Vec> uv(u + (static_cast<size_t>(e) * n_vars + v) * ns, ns);
      uv = (filt.f * uv).eval();
    }
  }
}

}  // namespace filter
}  // namespace hyflux
