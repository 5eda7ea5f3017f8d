#include <omp.h>

#include "covdistill/kernels.hpp"
#include "kernel_rows.hpp"

namespace covdistill::kernels::omp {

namespace {
// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;
}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  detail::check_matmul(a, b);
  if (out.rows() != a.rows() || out.cols() != b.cols()) out.resize(a.rows(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  const bool par = a.rows() * a.cols() * b.cols() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    detail::matmul_rows(a, b, out, static_cast<std::size_t>(r), static_cast<std::size_t>(r) + 1);
  }
}

void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::Shape, "matmul_at_b " + a.shape_str() + "^T * " + b.shape_str());
  }
  if (out.rows() != a.cols() || out.cols() != b.cols()) {
    if (accumulate) throw Error(ErrorKind::Shape, "matmul_at_b accumulator " + out.shape_str());
    out.resize(a.cols(), b.cols());
  }
  const std::size_t nblocks = (a.cols() + detail::kAtbBlock - 1) / detail::kAtbBlock;
  const bool par = a.rows() * a.cols() * b.cols() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(nblocks); ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * detail::kAtbBlock;
    detail::matmul_at_b_rows(a, b, out, i0, std::min(a.cols(), i0 + detail::kAtbBlock),
                             accumulate);
  }
}

void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::Shape, "matmul_a_bt " + a.shape_str() + " * " + b.shape_str() + "^T");
  }
  if (out.rows() != a.rows() || out.cols() != b.rows()) out.resize(a.rows(), b.rows());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  const bool par = a.rows() * a.cols() * b.rows() >= kParallelWork;
  const Matrix bt = detail::transposed(b);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    detail::matmul_rows(a, bt, out, static_cast<std::size_t>(r), static_cast<std::size_t>(r) + 1);
  }
}

void add_row_bias(Matrix& out, const Matrix& bias) {
  serial::add_row_bias(out, bias);
}

void col_sums(const Matrix& g, Matrix& out, bool accumulate) {
  if (out.size() != g.cols()) {
    if (accumulate) throw Error(ErrorKind::Shape, "col_sums accumulator " + out.shape_str());
    out.resize(1, g.cols());
  }
  const std::size_t n = g.cols();
  constexpr std::size_t kChunk = 64;
  const std::size_t nchunks = (n + kChunk - 1) / kChunk;
  const bool par = g.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(nchunks); ++c) {
    const std::size_t c0 = static_cast<std::size_t>(c) * kChunk;
    detail::col_sums_range(g, out, c0, std::min(n, c0 + kChunk), accumulate);
  }
}

}  // namespace covdistill::kernels::omp
