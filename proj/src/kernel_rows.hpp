#pragma once

// Row-range bodies shared by the serial and OpenMP kernels. Both variants
// call exactly these loops, so per-element summation order is identical.

#include <algorithm>
#include <cstddef>

#include "covdistill/matrix.hpp"

namespace covdistill::kernels::detail {

inline void check_matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::Shape, "matmul " + a.shape_str() + " * " + b.shape_str());
  }
}

inline void matmul_rows(const Matrix& a, const Matrix& b, Matrix& out, std::size_t r0,
                        std::size_t r1) {
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t r = r0; r < r1; ++r) {
    double* o = out.data() + r * n;
    std::fill(o, o + n, 0.0);
    const double* ar = a.data() + r * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = ar[k];
      const double* br = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

constexpr std::size_t kAtbBlock = 16;

// Output rows [i0, i1) of a^T * b; the reduction index runs in ascending order.
inline void matmul_at_b_rows(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i0,
                             std::size_t i1, bool accumulate) {
  const std::size_t n = b.cols();
  const std::size_t depth = a.rows();
  if (!accumulate) {
    std::fill(out.data() + i0 * n, out.data() + i1 * n, 0.0);
  }
  for (std::size_t t = 0; t < depth; ++t) {
    const double* at = a.data() + t * a.cols();
    const double* bt = b.data() + t * n;
    for (std::size_t i = i0; i < i1; ++i) {
      const double av = at[i];
      if (av == 0.0) continue;
      double* o = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * bt[j];
    }
  }
}

// b^T as a dense matrix, so a * b^T can reuse matmul_rows.
inline Matrix transposed(const Matrix& b) {
  Matrix t(b.cols(), b.rows());
  for (std::size_t r = 0; r < b.rows(); ++r) {
    for (std::size_t c = 0; c < b.cols(); ++c) t(c, r) = b(r, c);
  }
  return t;
}

inline void col_sums_range(const Matrix& g, Matrix& out, std::size_t c0, std::size_t c1,
                           bool accumulate) {
  const std::size_t n = g.cols();
  double* o = out.data();
  if (!accumulate) std::fill(o + c0, o + c1, 0.0);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double* gr = g.data() + r * n;
    for (std::size_t c = c0; c < c1; ++c) o[c] += gr[c];
  }
}

}  // namespace covdistill::kernels::detail
