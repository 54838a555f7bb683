#include <doctest.h>

#include <stdexcept>

#include "fnd/linalg.hpp"
#include "fnd/random.hpp"

using namespace fnd;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.flat()) v = rng.uniform(-1, 1);
  return m;
}

}  // namespace

TEST_CASE("GEMM kernels match naive triple loops") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(40), k = 1 + rng.index(40), m = 1 + rng.index(40);
    const auto a = random_matrix(rng, n, k);
    const auto bt = random_matrix(rng, m, k);
    const auto b = random_matrix(rng, k, m);
    const auto at = random_matrix(rng, k, n);

    Matrix nt, nn, tn;
    kernels::matmul_nt(a, bt, nt);
    kernels::matmul_nn(a, b, nn);
    kernels::matmul_tn(at, b, tn);
    REQUIRE(nt.rows() == n);
    REQUIRE(nt.cols() == m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s1 = 0, s2 = 0, s3 = 0;
        for (std::size_t p = 0; p < k; ++p) {
          s1 += a(i, p) * bt(j, p);
          s2 += a(i, p) * b(p, j);
          s3 += at(p, i) * b(p, j);
        }
        CHECK(nt(i, j) == doctest::Approx(s1).epsilon(1e-13));
        CHECK(nn(i, j) == doctest::Approx(s2).epsilon(1e-13));
        CHECK(tn(i, j) == doctest::Approx(s3).epsilon(1e-13));
      }

    Matrix nt_s, nn_s, tn_s;
    kernels::matmul_nt(a, bt, nt_s, Exec::kSerial);
    kernels::matmul_nn(a, b, nn_s, Exec::kSerial);
    kernels::matmul_tn(at, b, tn_s, Exec::kSerial);
    CHECK(nt_s == nt);
    CHECK(nn_s == nn);
    CHECK(tn_s == tn);
  }
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), Exec::kParallel, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, Exec::kParallel,
                               [](std::size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}
