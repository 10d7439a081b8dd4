// Times the OpenMP residual and gradient kernels against their plain-loop
// reference implementations and cross-checks the results.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hyflux/fr.hpp"

using namespace hyflux;

namespace {

double now() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <class F>
double time_best(int reps, F&& f) {
  double best = 1e300;
  for (int k = 0; k < reps; ++k) {
    double t0 = now();
    f();
    best = std::min(best, now() - t0);
  }
  return best;
}

// worst difference relative to the larger array's magnitude
double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0, scale = 1e-300;
  for (size_t k = 0; k < a.size(); ++k) {
    m = std::max(m, std::abs(a[k] - b[k]));
    scale = std::max(scale, std::abs(a[k]));
  }
  return m / scale;
}

}  // namespace

int main(int argc, char** argv) {
  int n = argc > 1 ? std::atoi(argv[1]) : 48;
  int p = argc > 2 ? std::atoi(argv[2]) : 4;
  int reps = argc > 3 ? std::atoi(argv[3]) : 5;

  mesh::Mesh m = mesh::generate_uniform_periodic(n, n, 10.0, 10.0);
  basis::RefElement re = basis::build_reference_element(p, basis::Scheme::HFR);
  std::vector<mesh::ElemGeom> geo = mesh::compute_geometric_factors(m, re);
  fr::Discretization d{&m, &re, &geo, physics::Physics::edac(100.0, 1e-3), {}};

  std::vector<double> u(d.dof());
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  for (int e = 0; e < m.n_elems(); ++e) {
    double* ue = d.elem(u.data(), e);
    for (int i = 0; i < d.ns(); ++i) {
      ue[0 * d.ns() + i] = 1.0 + 0.2 * unit(rng);
      ue[1 * d.ns() + i] = 0.8 + 0.3 * unit(rng);
      ue[2 * d.ns() + i] = -0.6 + 0.3 * unit(rng);
    }
  }

  int threads = 1;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif
  std::printf("mesh %dx%d, p = %d, %d vars, %zu dofs, %d threads, best of %d\n",
              n, n, p, d.nv(), u.size(), threads, reps);

  std::vector<double> r_par(d.dof()), r_ser(d.dof());
  double t_par = time_best(
      reps, [&] { fr::fr_residual(d, u.data(), 0.0, nullptr, r_par.data()); });
  double t_ser = time_best(reps, [&] {
    fr::fr_residual_serial(d, u.data(), 0.0, nullptr, r_ser.data());
  });
  double dr = rel_diff(r_par, r_ser);
  std::printf("fr_residual    parallel %.4f ms  serial %.4f ms  speedup %.2fx  rel diff %.3e\n",
              1e3 * t_par, 1e3 * t_ser, t_ser / t_par, dr);

  std::vector<double> qx_p(d.dof()), qy_p(d.dof());
  std::vector<double> qx_s(d.dof()), qy_s(d.dof());
  double g_par = time_best(reps, [&] {
    fr::br1_gradients(d, u.data(), 0.0, nullptr, qx_p.data(), qy_p.data());
  });
  double g_ser = time_best(reps, [&] {
    fr::br1_gradients_serial(d, u.data(), 0.0, nullptr, qx_s.data(),
                             qy_s.data());
  });
  double dg = std::max(rel_diff(qx_p, qx_s), rel_diff(qy_p, qy_s));
  std::printf("br1_gradients  parallel %.4f ms  serial %.4f ms  speedup %.2fx  rel diff %.3e\n",
              1e3 * g_par, 1e3 * g_ser, g_ser / g_par, dg);

  if (dr > 1e-12 || dg > 1e-12) {
    std::fprintf(stderr, "kernel mismatch beyond 1e-12\n");
    return 1;
  }
  return 0;
}
