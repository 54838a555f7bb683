#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fnd/parallel.hpp"

namespace fnd {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, 0.0);
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// GEMM variants used by the feed-forward blocks. Each output element is a
// sum over the inner index in ascending order, computed by one thread, so
// the serial and OpenMP paths agree bit-for-bit. The parallel paths split
// output rows across threads.
namespace kernels {

/// C = A * B^T.  A: n x k, B: m x k, C: n x m.
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, Exec exec = Exec::kParallel);
/// C = A * B.    A: n x k, B: k x m, C: n x m.
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, Exec exec = Exec::kParallel);
/// C = A^T * B.  A: k x n, B: k x m, C: n x m.
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, Exec exec = Exec::kParallel);

}  // namespace kernels

}  // namespace fnd
