#pragma once

#include "covdistill/matrix.hpp"

// Dense kernels used by the surrogate's forward and backward passes.
//
// Two implementations with identical per-element summation order:
// `serial` is the reference, `omp` splits output rows (or output columns for
// the reduction kernels) across OpenMP threads. Results agree bitwise.
// Callers use the unqualified names, which dispatch to `omp`.

namespace covdistill::kernels {

namespace serial {
/// out = a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
/// out (+)= a^T * b, summing over rows of a and b in index order.
void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate);
/// out = a * b^T
void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out);
/// out.row(r) += bias
void add_row_bias(Matrix& out, const Matrix& bias);
/// bias_grad (+)= column sums of g
void col_sums(const Matrix& g, Matrix& out, bool accumulate);
}  // namespace serial

namespace omp {
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate);
void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out);
void add_row_bias(Matrix& out, const Matrix& bias);
void col_sums(const Matrix& g, Matrix& out, bool accumulate);
}  // namespace omp

using omp::add_row_bias;
using omp::col_sums;
using omp::matmul;
using omp::matmul_a_bt;
using omp::matmul_at_b;

/// Allocating convenience form of matmul.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  omp::matmul(a, b, out);
  return out;
}

}  // namespace covdistill::kernels
