#pragma once

#include "hyflux/basis.hpp"

namespace hyflux {
namespace filter {

// Modal exponential filter F = V diag(sigma^(dt/t_ref)) V^-1. The time-step
// power makes repeated application over a fixed physical interval independent
// of the step size.
struct ModalFilter {
  int ns = 0;
  double alpha = 0.0, s_f = 1.0, eta_c = 0.0;
  Vec sigma;  // per-mode damping before normalization
  Mat f;      // nodal filter matrix
};

ModalFilter build_filter(const basis::RefElement& re, double alpha, double s_f,
                         double eta_c, double dt, double t_ref);

// In-place filtering of the element-blocked state u[e*nv*ns + v*ns + i].
// When region is given, only flagged elements are touched.
void apply_filter(const ModalFilter& filt, int n_vars, int n_elems, double* u,
                  const std::vector<char>* region = nullptr);

}  // namespace filter
}  // namespace hyflux
