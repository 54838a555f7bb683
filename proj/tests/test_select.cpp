#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fnd/error.hpp"
#include "fnd/random.hpp"
#include "fnd/select.hpp"

using namespace fnd;

namespace {

DomainEmbedding embedding(const std::vector<std::vector<double>>& rows) {
  DomainEmbedding e;
  for (std::size_t i = 0; i < rows.size(); ++i) e.ids.push_back("r" + std::to_string(i));
  e.rows = rows;
  return e;
}

// Antipodal centres. Every nonzero sparse projection of a centre has
// |dot| >= 0.1 * sqrt(3), well above the noise, so clusters never split.
DomainEmbedding two_clusters(Rng& rng, int per_cluster) {
  std::vector<std::vector<double>> rows;
  const std::vector<std::vector<double>> centres{{0.4, 0.65, 0.8, 0.95},
                                                 {-0.4, -0.65, -0.8, -0.95}};
  for (const auto& c : centres)
    for (int i = 0; i < per_cluster; ++i) {
      auto p = c;
      for (double& v : p) v += rng.uniform(-0.005, 0.005);
      rows.push_back(p);
    }
  return embedding(rows);
}

}  // namespace

TEST_CASE("projection entries follow the sparse distribution") {
  const auto bank = sample_projections(1000, 100, 42);
  const double s3 = std::sqrt(3.0);
  double pos = 0, zero = 0, neg = 0;
  for (double v : bank.entries) {
    if (v == s3) pos += 1;
    else if (v == 0.0) zero += 1;
    else if (v == -s3) neg += 1;
    else FAIL("unexpected entry " << v);
  }
  const double n = static_cast<double>(bank.entries.size());
  CHECK(std::abs(pos / n - 1.0 / 6) < 0.01);
  CHECK(std::abs(zero / n - 2.0 / 3) < 0.01);
  CHECK(std::abs(neg / n - 1.0 / 6) < 0.01);
  CHECK(sample_projections(1000, 100, 42).entries == bank.entries);
  CHECK(sample_projections(1000, 100, 43).entries != bank.entries);
  CHECK_THROWS_AS(sample_projections(0, 3, 1), UsageError);
}

TEST_CASE("hash keys") {
  ProjectionBank bank;
  bank.dim = 2;
  bank.count = 2;
  bank.entries = {std::sqrt(3.0), -std::sqrt(3.0), -std::sqrt(3.0), 0.0};
  const std::vector<double> f{1.0, 0.0}, zero{0.0, 0.0};
  CHECK(hash_record(f, bank).str() == "10");
  CHECK(hash_record(zero, bank).str() == "11");
  CHECK_THROWS_AS(hash_record(std::vector<double>{1.0}, bank), UsageError);

  const auto big = sample_projections(5, 70, 3);
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(5), y(5);
    for (double& v : x) v = rng.uniform(-1, 1);
    const double scale = rng.uniform(0.01, 100.0);
    for (std::size_t i = 0; i < 5; ++i) y[i] = x[i] * scale;
    const auto kx = hash_record(x, big);
    CHECK(kx == hash_record(y, big));
    CHECK(kx.length == 70);
    CHECK(kx.words.size() == 2);
    // Bit i is the sign of projection i.
    for (std::size_t i = 0; i < 70; ++i) {
      double dot = 0;
      for (std::size_t k = 0; k < 5; ++k) dot += big.row(i)[k] * x[k];
      CHECK(kx.bit(i) == (dot >= 0));
    }
  }
}

TEST_CASE("Hamming distance") {
  HashKey a{3, {0b101ULL << 61}}, b{3, {0b011ULL << 61}};
  CHECK(hamming_distance(a, b) == 2);
  CHECK(hamming_distance(a, a) == 0);
  CHECK_THROWS_AS(hamming_distance(a, HashKey{4, {0}}), UsageError);
  CHECK(a > b);
}

TEST_CASE("LSH selection basics") {
  Rng rng(2);
  const auto emb = two_clusters(rng, 15);
  auto r = lsh_select(emb, emb.size(), 10, 1);
  CHECK(std::set<std::string>(r.ids.begin(), r.ids.end()).size() == emb.size());
  CHECK(r.ids.size() == emb.size());

  r = lsh_select(emb, 7, 10, 5);
  CHECK(r.ids.size() == 7);
  CHECK(std::set<std::string>(r.ids.begin(), r.ids.end()).size() == 7);
  std::size_t picked = 0;
  for (const auto& s : r.round_stats) {
    CHECK(s.picked >= 1);
    CHECK(s.picked <= s.bins);
    picked += s.picked;
  }
  CHECK(picked == 7);
  CHECK(r.rounds == r.round_stats.size());

  const auto again = lsh_select(emb, 7, 10, 5, Exec::kSerial);
  CHECK(again.ids == r.ids);
  CHECK_THROWS_AS(lsh_select(emb, 0, 10, 1), UsageError);
  CHECK_THROWS_AS(lsh_select(emb, emb.size() + 1, 10, 1), UsageError);
}

TEST_CASE("LSH picks one record per well-separated cluster") {
  Rng rng(8);
  const auto emb = two_clusters(rng, 20);
  int both = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto r = lsh_select(emb, 2, 10, seed);
    auto cluster = [](const std::string& id) { return std::stoi(id.substr(1)) < 20 ? 0 : 1; };
    both += cluster(r.ids[0]) != cluster(r.ids[1]);
  }
  CHECK(both >= 190);
}

TEST_CASE("coverage measure") {
  const std::vector<std::vector<double>> three{{0.0}, {1.0}, {3.0}};
  CHECK(coverage_lambda(three) == doctest::Approx(std::sqrt(2.0) / 4).epsilon(1e-14));
  const std::vector<std::vector<double>> grid{{0.0}, {0.5}, {1.0}, {1.5}};
  CHECK(coverage_lambda(grid) == 0.0);
  const std::vector<std::vector<double>> dup{{1.0, 2.0}, {1.0, 2.0}};
  CHECK_THROWS_WITH_AS(coverage_lambda(dup), "degenerate point set", DataError);
  CHECK_THROWS_AS(coverage_lambda(std::vector<std::vector<double>>{{1.0}}), UsageError);

  // Brute-force nearest neighbours, serial and parallel.
  Rng rng(6);
  std::vector<std::vector<double>> pts(120, std::vector<double>(3));
  for (auto& p : pts)
    for (double& v : p) v = rng.uniform();
  const auto d = nearest_neighbor_distances(pts);
  CHECK(d == nearest_neighbor_distances(pts, Exec::kSerial));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = 1e300;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j == i) continue;
      double s = 0;
      for (int k = 0; k < 3; ++k) s += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
      best = std::min(best, std::sqrt(s));
    }
    CHECK(d[i] == doctest::Approx(best).epsilon(1e-14));
  }
  CHECK(coverage_lambda(pts) == coverage_lambda(pts, Exec::kSerial));
}

TEST_CASE("random and farthest-point baselines") {
  Rng rng(3);
  const auto emb = two_clusters(rng, 10);
  auto r = random_select(emb.ids, emb.size(), 4);
  CHECK(std::set<std::string>(r.ids.begin(), r.ids.end()).size() == emb.size());
  r = random_select(emb.ids, 5, 4);
  CHECK(r.ids == random_select(emb.ids, 5, 4).ids);
  CHECK(r.ids.size() == 5);
  CHECK_THROWS_AS(random_select(emb.ids, 21, 4), UsageError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto f = farthest_point_oracle(emb, 2, seed);
    REQUIRE(f.size() == 2);
    CHECK((std::stoi(f[0].substr(1)) < 10) != (std::stoi(f[1].substr(1)) < 10));
  }
  CHECK_THROWS_AS(farthest_point_oracle(emb, 21, 1), UsageError);

  const std::vector<std::string> ids{"r3", "r0"};
  const auto rows = rows_for(emb, ids);
  CHECK(rows[0] == emb.rows[3]);
  CHECK(rows[1] == emb.rows[0]);
  CHECK_THROWS_AS(rows_for(emb, std::vector<std::string>{"zz"}), DataError);
}
