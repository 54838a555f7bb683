#pragma once

// Budgeted instance selection over domain embeddings: sparse random
// projection LSH, random and farthest-point baselines, and the coverage
// measure (coefficient of variation of nearest-neighbour distances).

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fnd/domain.hpp"
#include "fnd/parallel.hpp"

namespace fnd {

/// |H| projection vectors with entries sqrt(3) * {+1, 0, -1} drawn with
/// probabilities {1/6, 2/3, 1/6}.
struct ProjectionBank {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::vector<double> entries;  // row-major, count x dim

  std::span<const double> row(std::size_t i) const { return {entries.data() + i * dim, dim}; }
};

/// Sign bits of the |H| projections; bit i is 1 for a non-negative dot
/// product (sgn(0) := +1). Bits are packed most-significant first so that
/// comparing words compares keys lexicographically in projection order.
struct HashKey {
  std::size_t length = 0;
  std::vector<std::uint64_t> words;

  bool bit(std::size_t i) const { return (words[i / 64] >> (63 - i % 64)) & 1U; }
  std::string str() const;
  auto operator<=>(const HashKey&) const = default;
};

std::size_t hamming_distance(const HashKey& a, const HashKey& b);

ProjectionBank sample_projections(std::size_t dim, std::size_t count, std::uint64_t seed);

HashKey hash_record(std::span<const double> f_domain, const ProjectionBank& bank);

struct RoundStats {
  std::size_t round = 0;
  std::size_t bins = 0;
  std::size_t picked = 0;
};

struct SelectionResult {
  std::vector<std::string> ids;  // in selection order
  std::size_t rounds = 0;
  std::vector<RoundStats> round_stats;
};

/// Repeated rounds of {fresh bank seeded seed + round, bucket unselected
/// records by key, one uniform pick per bucket} until `budget` records are
/// chosen. Buckets are visited in ascending key order.
SelectionResult lsh_select(const DomainEmbedding& embeddings, std::size_t budget,
                           std::size_t hash_count, std::uint64_t seed,
                           Exec exec = Exec::kParallel);

SelectionResult random_select(std::span<const std::string> ids, std::size_t budget,
                              std::uint64_t seed);

/// Greedy k-centre (max-min distance) from a seeded random start. O(B n).
std::vector<std::string> farthest_point_oracle(const DomainEmbedding& embeddings,
                                               std::size_t budget, std::uint64_t seed);

/// Euclidean distance from each point to its nearest other point.
std::vector<double> nearest_neighbor_distances(std::span<const std::vector<double>> points,
                                               Exec exec = Exec::kParallel);

/// lambda = population-std(delta) / mean(delta) over nearest-neighbour
/// distances delta. Needs n >= 2 and a non-degenerate point set.
double coverage_lambda(std::span<const std::vector<double>> points,
                       Exec exec = Exec::kParallel);

/// Rows of `embeddings` for the given ids, in the order of `ids`.
std::vector<std::vector<double>> rows_for(const DomainEmbedding& embeddings,
                                          std::span<const std::string> ids);

}  // namespace fnd
