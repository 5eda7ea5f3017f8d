#include "covdistill/kernels.hpp"
#include "kernel_rows.hpp"

namespace covdistill::kernels::serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  detail::check_matmul(a, b);
  if (out.rows() != a.rows() || out.cols() != b.cols()) out.resize(a.rows(), b.cols());
  detail::matmul_rows(a, b, out, 0, a.rows());
}

void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::Shape, "matmul_at_b " + a.shape_str() + "^T * " + b.shape_str());
  }
  if (out.rows() != a.cols() || out.cols() != b.cols()) {
    if (accumulate) throw Error(ErrorKind::Shape, "matmul_at_b accumulator " + out.shape_str());
    out.resize(a.cols(), b.cols());
  }
  for (std::size_t i0 = 0; i0 < a.cols(); i0 += detail::kAtbBlock) {
    detail::matmul_at_b_rows(a, b, out, i0, std::min(a.cols(), i0 + detail::kAtbBlock),
                             accumulate);
  }
}

void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::Shape, "matmul_a_bt " + a.shape_str() + " * " + b.shape_str() + "^T");
  }
  if (out.rows() != a.rows() || out.cols() != b.rows()) out.resize(a.rows(), b.rows());
  detail::matmul_rows(a, detail::transposed(b), out, 0, a.rows());
}

void add_row_bias(Matrix& out, const Matrix& bias) {
  if (bias.size() != out.cols()) {
    throw Error(ErrorKind::Shape, "bias " + bias.shape_str() + " for " + out.shape_str());
  }
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias.data()[c];
  }
}

void col_sums(const Matrix& g, Matrix& out, bool accumulate) {
  if (out.size() != g.cols()) {
    if (accumulate) throw Error(ErrorKind::Shape, "col_sums accumulator " + out.shape_str());
    out.resize(1, g.cols());
  }
  detail::col_sums_range(g, out, 0, g.cols(), accumulate);
}

}  // namespace covdistill::kernels::serial
