#pragma once

#include <functional>
#include <vector>

namespace hyflux {
namespace linalg {

// Sparse matrix of uniform square blocks in CSR layout. The sparsity pattern
// is fixed at construction; assembly writes into preallocated blocks.
struct BlockCsr {
  int n = 0;  // block rows/cols
  int b = 1;  // scalar block size
  std::vector<int> row_ptr;
  std::vector<int> col;
  std::vector<double> val;  // nnz * b * b, row-major within each block

  static BlockCsr from_pattern(int n, int b,
                               const std::vector<std::vector<int>>& cols);
  int rows() const { return n * b; }
  void set_zero();
  // Pointer to the block at (row, col); throws if the pattern lacks it.
  double* block(int row, int col);
  const double* block(int row, int col) const;
  void matvec(const double* x, double* y) const;
};

// Factored diagonal blocks of a BlockCsr, applied as a preconditioner.
struct BlockJacobi {
  int n = 0, b = 1;
  std::vector<double> inv;  // n * b * b
  void build(const BlockCsr& a);
  void apply(const double* x, double* y) const;
};

struct GmresOptions {
  int restart = 30;
  int max_iters = 500;
  double rtol = 1e-8;
  double atol = 1e-14;
};

struct GmresResult {
  int iters = 0;
  double rel_residual = 0.0;
  bool converged = false;
};

using LinOp = std::function<void(const double*, double*)>;

// Right-preconditioned restarted GMRES; x holds the initial guess on entry.
// Converged when ||b - Ax|| <= max(atol, rtol * ||b||).
GmresResult gmres(int n, const LinOp& op, const LinOp& prec, const double* rhs,
                  double* x, const GmresOptions& opt);

}  // namespace linalg
}  // namespace hyflux
