#include "fnd/select.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

#include "fnd/error.hpp"
#include "fnd/random.hpp"
#include "fnd/stats.hpp"

namespace fnd {

std::string HashKey::str() const {
  std::string s(length, '0');
  for (std::size_t i = 0; i < length; ++i) {
    if (bit(i)) s[i] = '1';
  }
  return s;
}

std::size_t hamming_distance(const HashKey& a, const HashKey& b) {
  if (a.length != b.length) throw UsageError("hash keys differ in length");
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w) d += std::popcount(a.words[w] ^ b.words[w]);
  return d;
}

ProjectionBank sample_projections(std::size_t dim, std::size_t count, std::uint64_t seed) {
  if (dim == 0 || count == 0) throw UsageError("projection bank needs dim >= 1 and count >= 1");
  const double root3 = std::sqrt(3.0);
  ProjectionBank bank;
  bank.dim = dim;
  bank.count = count;
  bank.seed = seed;
  bank.entries.resize(dim * count);
  Rng rng(derive_seed(seed, 0x7a0b));
  for (double& e : bank.entries) {
    const auto u = rng.index(6);
    e = u == 0 ? root3 : (u == 5 ? -root3 : 0.0);
  }
  return bank;
}

HashKey hash_record(std::span<const double> f_domain, const ProjectionBank& bank) {
  if (f_domain.size() != bank.dim) {
    throw UsageError("embedding dimension " + std::to_string(f_domain.size()) +
                     " does not match projection dimension " + std::to_string(bank.dim));
  }
  HashKey key;
  key.length = bank.count;
  key.words.assign((bank.count + 63) / 64, 0);
  for (std::size_t i = 0; i < bank.count; ++i) {
    const auto h = bank.row(i);
    double dot = 0;
    for (std::size_t j = 0; j < bank.dim; ++j) dot += h[j] * f_domain[j];
    if (dot >= 0.0) key.words[i / 64] |= std::uint64_t{1} << (63 - i % 64);
  }
  return key;
}

SelectionResult lsh_select(const DomainEmbedding& embeddings, std::size_t budget,
                           std::size_t hash_count, std::uint64_t seed, Exec exec) {
  const std::size_t n = embeddings.size();
  if (budget == 0) throw UsageError("budget must be at least 1");
  if (budget > n) {
    throw UsageError("budget " + std::to_string(budget) + " exceeds pool size " +
                     std::to_string(n));
  }
  SelectionResult result;
  std::vector<bool> selected(n, false);
  std::vector<std::size_t> remaining(n);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  std::vector<HashKey> keys;

  for (std::size_t round = 0; result.ids.size() < budget; ++round) {
    const std::uint64_t round_seed = seed + round;
    const auto bank = sample_projections(embeddings.dim(), hash_count, round_seed);
    keys.assign(remaining.size(), {});
    parallel_for(remaining.size(), exec, [&](std::size_t i) {
      keys[i] = hash_record(embeddings.rows[remaining[i]], bank);
    });

    std::map<HashKey, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < remaining.size(); ++i) buckets[keys[i]].push_back(remaining[i]);

    Rng rng(derive_seed(round_seed, 0x91c4));
    RoundStats stats{round, buckets.size(), 0};
    for (const auto& [key, members] : buckets) {
      if (result.ids.size() >= budget) break;
      const std::size_t pick = members[rng.index(members.size())];
      selected[pick] = true;
      result.ids.push_back(embeddings.ids[pick]);
      ++stats.picked;
    }
    result.round_stats.push_back(stats);
    std::erase_if(remaining, [&](std::size_t i) { return selected[i]; });
  }
  result.rounds = result.round_stats.size();
  return result;
}

SelectionResult random_select(std::span<const std::string> ids, std::size_t budget,
                              std::uint64_t seed) {
  if (budget > ids.size()) {
    throw UsageError("budget " + std::to_string(budget) + " exceeds pool size " +
                     std::to_string(ids.size()));
  }
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x2a4d));
  // Partial Fisher-Yates: the first `budget` slots are a uniform sample.
  for (std::size_t i = 0; i < budget; ++i) {
    std::swap(order[i], order[i + rng.index(order.size() - i)]);
  }
  SelectionResult result;
  for (std::size_t i = 0; i < budget; ++i) result.ids.push_back(ids[order[i]]);
  result.rounds = 1;
  result.round_stats.push_back({0, 1, budget});
  return result;
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

std::vector<std::string> farthest_point_oracle(const DomainEmbedding& embeddings,
                                               std::size_t budget, std::uint64_t seed) {
  const std::size_t n = embeddings.size();
  if (budget > n) throw UsageError("budget exceeds the number of points");
  std::vector<std::string> out;
  if (budget == 0) return out;
  Rng rng(derive_seed(seed, 0xfa27));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t current = rng.index(n);
  for (std::size_t k = 0; k < budget; ++k) {
    out.push_back(embeddings.ids[current]);
    nearest[current] = -1.0;
    std::size_t next = current;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (nearest[i] < 0.0) continue;
      nearest[i] = std::min(nearest[i], distance(embeddings.rows[i], embeddings.rows[current]));
      if (nearest[i] > best) {
        best = nearest[i];
        next = i;
      }
    }
    current = next;
  }
  return out;
}

std::vector<double> nearest_neighbor_distances(std::span<const std::vector<double>> points,
                                               Exec exec) {
  const std::size_t n = points.size();
  std::vector<double> delta(n, std::numeric_limits<double>::infinity());
  parallel_for(n, exec, [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) best = std::min(best, distance(points[i], points[k]));
    }
    delta[i] = best;
  });
  return delta;
}

double coverage_lambda(std::span<const std::vector<double>> points, Exec exec) {
  if (points.size() < 2) throw UsageError("coverage needs at least two points");
  const auto delta = nearest_neighbor_distances(points, exec);
  const double m = mean(delta);
  if (!(m > 0.0)) throw DataError("degenerate point set");
  return population_stddev(delta) / m;
}

std::vector<std::vector<double>> rows_for(const DomainEmbedding& embeddings,
                                          std::span<const std::string> ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < embeddings.size(); ++i) index.emplace(embeddings.ids[i], i);
  std::vector<std::vector<double>> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("no domain embedding for record " + id);
    rows.push_back(embeddings.rows[it->second]);
  }
  return rows;
}

}  // namespace fnd
