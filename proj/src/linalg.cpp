#include "fnd/linalg.hpp"

#include <algorithm>
#include <cstdint>
#include <string>

#include "fnd/error.hpp"

namespace fnd::kernels {

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw UsageError(std::string("matrix shape mismatch in ") + what);
}

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 14;

bool use_threads(Exec exec, std::size_t work) {
  return exec == Exec::kParallel && work >= kParallelThreshold;
}

inline void nt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const auto ar = a.row(i);
  auto cr = c.row(i);
  for (std::size_t j = 0; j < b.rows(); ++j) {
    const auto br = b.row(j);
    double s = 0.0;
    for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
    cr[j] = s;
  }
}

inline void nn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto cr = c.row(i);
  std::fill(cr.begin(), cr.end(), 0.0);
  const auto ar = a.row(i);
  for (std::size_t k = 0; k < ar.size(); ++k) {
    const double aik = ar[k];
    const auto br = b.row(k);
    for (std::size_t j = 0; j < cr.size(); ++j) cr[j] += aik * br[j];
  }
}

inline void tn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto cr = c.row(i);
  std::fill(cr.begin(), cr.end(), 0.0);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double aki = a(k, i);
    const auto br = b.row(k);
    for (std::size_t j = 0; j < cr.size(); ++j) cr[j] += aki * br[j];
  }
}

template <typename RowFn>
void for_rows(std::size_t rows, bool threads, RowFn&& fn) {
  if (!threads) {
    for (std::size_t i = 0; i < rows; ++i) fn(i);
    return;
  }
  const auto n = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) fn(static_cast<std::size_t>(i));
}

}  // namespace

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, Exec exec) {
  check(a.cols() == b.cols(), "matmul_nt");
  if (c.rows() != a.rows() || c.cols() != b.rows()) c.resize(a.rows(), b.rows());
  for_rows(a.rows(), use_threads(exec, a.rows() * b.rows() * a.cols()),
           [&](std::size_t i) { nt_row(a, b, c, i); });
}

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, Exec exec) {
  check(a.cols() == b.rows(), "matmul_nn");
  if (c.rows() != a.rows() || c.cols() != b.cols()) c.resize(a.rows(), b.cols());
  for_rows(a.rows(), use_threads(exec, a.rows() * b.rows() * b.cols()),
           [&](std::size_t i) { nn_row(a, b, c, i); });
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, Exec exec) {
  check(a.rows() == b.rows(), "matmul_tn");
  if (c.rows() != a.cols() || c.cols() != b.cols()) c.resize(a.cols(), b.cols());
  for_rows(a.cols(), use_threads(exec, a.rows() * a.cols() * b.cols()),
           [&](std::size_t i) { tn_row(a, b, c, i); });
}

}  // namespace fnd::kernels
