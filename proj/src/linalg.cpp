#include "hyflux/linalg.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace hyflux {
namespace linalg {

BlockCsr BlockCsr::from_pattern(int n, int b,
                                const std::vector<std::vector<int>>& cols) {
  BlockCsr a;
  a.n = n;
  a.b = b;
  a.row_ptr.assign(n + 1, 0);
  for (int r = 0; r < n; ++r) a.row_ptr[r + 1] = a.row_ptr[r] + static_cast<int>(cols[r].size());
  a.col.reserve(a.row_ptr[n]);
  for (int r = 0; r < n; ++r) {
    std::vector<int> sorted(cols[r]);
    std::sort(sorted.begin(), sorted.end());
    for (size_t k = 1; k < sorted.size(); ++k)
      if (sorted[k] == sorted[k - 1])
        throw std::invalid_argument("BlockCsr: duplicate column in pattern");
    a.col.insert(a.col.end(), sorted.begin(), sorted.end());
  }
  a.val.assign(static_cast<size_t>(a.row_ptr[n]) * b * b, 0.0);
  return a;
}

void BlockCsr::set_zero() { std::fill(val.begin(), val.end(), 0.0); }

double* BlockCsr::block(int row, int c) {
  auto first = col.begin() + row_ptr[row];
  auto last = col.begin() + row_ptr[row + 1];
  auto it = std::lower_bound(first, last, c);
  if (it == last || *it != c)
    throw std::out_of_range("BlockCsr: block not in pattern");
  return val.data() + static_cast<size_t>(it - col.begin()) * b * b;
}

const double* BlockCsr::block(int row, int c) const {
  return const_cast<BlockCsr*>(this)->block(row, c);
}

void BlockCsr::matvec(const double* x, double* y) const {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    double* yr = y + static_cast<size_t>(r) * b;
    for (int i = 0; i < b; ++i) yr[i] = 0.0;
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      const double* blk = val.data() + static_cast<size_t>(k) * b * b;
      const double* xc = x + static_cast<size_t>(col[k]) * b;
      for (int i = 0; i < b; ++i) {
        double s = 0.0;
        for (int j = 0; j < b; ++j) s += blk[i * b + j] * xc[j];
        yr[i] += s;
      }
    }
  }
}

void BlockJacobi::build(const BlockCsr& a) {
  n = a.n;
  b = a.b;
  inv.resize(static_cast<size_t>(n) * b * b);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        d(a.block(r, r), b, b);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>
        di(inv.data() + static_cast<size_t>(r) * b * b, b, b);
    di = d.partialPivLu().inverse();
  }
}

void BlockJacobi::apply(const double* x, double* y) const {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    const double* blk = inv.data() + static_cast<size_t>(r) * b * b;
    const double* xr = x + static_cast<size_t>(r) * b;
    double* yr = y + static_cast<size_t>(r) * b;
    for (int i = 0; i < b; ++i) {
      double s = 0.0;
      for (int j = 0; j < b; ++j) s += blk[i * b + j] * xr[j];
      yr[i] = s;
    }
  }
}

namespace {

double dot(int n, const double* a, const double* b) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double norm(int n, const double* a) { return std::sqrt(dot(n, a, a)); }

}  // namespace

GmresResult gmres(int n, const LinOp& op, const LinOp& prec, const double* rhs,
                  double* x, const GmresOptions& opt) {
  GmresResult res;
  int m = opt.restart;
  double bnorm = norm(n, rhs);
  double tol = std::max(opt.atol, opt.rtol * bnorm);

  std::vector<double> r(n), w(n), z(n);
  std::vector<std::vector<double>> v(m + 1, std::vector<double>(n));
  std::vector<double> h(static_cast<size_t>(m + 1) * m, 0.0);
  std::vector<double> cs(m), sn(m), g(m + 1);

  op(x, r.data());
  for (int i = 0; i < n; ++i) r[i] = rhs[i] - r[i];
  double rnorm = norm(n, r.data());
  res.rel_residual = bnorm > 0 ? rnorm / bnorm : rnorm;
  if (rnorm <= tol) {
    res.converged = true;
    return res;
  }

  while (res.iters < opt.max_iters) {
    std::fill(h.begin(), h.end(), 0.0);
    std::fill(g.begin(), g.end(), 0.0);
    g[0] = rnorm;
    for (int i = 0; i < n; ++i) v[0][i] = r[i] / rnorm;

    int k = 0;
    for (; k < m && res.iters < opt.max_iters; ++k, ++res.iters) {
      prec(v[k].data(), z.data());
      op(z.data(), w.data());
      // modified Gram-Schmidt
      for (int j = 0; j <= k; ++j) {
        double hjk = dot(n, w.data(), v[j].data());
        h[j * m + k] = hjk;
        for (int i = 0; i < n; ++i) w[i] -= hjk * v[j][i];
      }
      double hk1 = norm(n, w.data());
      h[(k + 1) * m + k] = hk1;
      if (hk1 > 0.0)
        for (int i = 0; i < n; ++i) v[k + 1][i] = w[i] / hk1;

      // apply stored Givens rotations, then a new one to annihilate h[k+1][k]
      for (int j = 0; j < k; ++j) {
        double t = cs[j] * h[j * m + k] + sn[j] * h[(j + 1) * m + k];
        h[(j + 1) * m + k] = -sn[j] * h[j * m + k] + cs[j] * h[(j + 1) * m + k];
        h[j * m + k] = t;
      }
      double denom = std::hypot(h[k * m + k], hk1);
      cs[k] = denom > 0 ? h[k * m + k] / denom : 1.0;
      sn[k] = denom > 0 ? hk1 / denom : 0.0;
      h[k * m + k] = denom;
      g[k + 1] = -sn[k] * g[k];
      g[k] *= cs[k];

      if (std::abs(g[k + 1]) <= tol || hk1 == 0.0) {
        ++k;
        ++res.iters;
        break;
      }
    }

    // back-substitute for the Krylov coefficients and update x
    std::vector<double> y(k);
    for (int i = k - 1; i >= 0; --i) {
      double s = g[i];
      for (int j = i + 1; j < k; ++j) s -= h[i * m + j] * y[j];
      y[i] = s / h[i * m + i];
    }
    std::fill(z.begin(), z.end(), 0.0);
    for (int j = 0; j < k; ++j)
      for (int i = 0; i < n; ++i) z[i] += y[j] * v[j][i];
    prec(z.data(), w.data());
    for (int i = 0; i < n; ++i) x[i] += w[i];

    op(x, r.data());
    for (int i = 0; i < n; ++i) r[i] = rhs[i] - r[i];
    rnorm = norm(n, r.data());
    res.rel_residual = bnorm > 0 ? rnorm / bnorm : rnorm;
    if (rnorm <= tol) {
      res.converged = true;
      return res;
    }
  }
  return res;
}

}  // namespace linalg
}  // namespace hyflux
