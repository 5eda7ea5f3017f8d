#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "covdistill/error.hpp"

namespace covdistill {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorKind::Shape, "buffer length " + std::to_string(data_.size()) +
                                        " does not match " + std::to_string(rows_) + "x" +
                                        std::to_string(cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, 0.0);
  }

  /// Appends the rows of m; an empty matrix adopts m's width.
  void append_rows(const Matrix& m) {
    if (rows_ == 0 && data_.empty()) cols_ = m.cols_;
    if (m.cols_ != cols_) {
      throw Error(ErrorKind::Shape, "append " + m.shape_str() + " to " + shape_str());
    }
    data_.insert(data_.end(), m.data_.begin(), m.data_.end());
    rows_ += m.rows_;
  }
  void reserve_rows(std::size_t rows) { data_.reserve(rows * cols_); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix& o) const = default;

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A learnable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = false;  // receives decoupled weight decay

  Param() = default;
  Param(std::string n, std::size_t rows, std::size_t cols, bool weight_decay = false)
      : name(std::move(n)), value(rows, cols), grad(rows, cols), decay(weight_decay) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace covdistill
