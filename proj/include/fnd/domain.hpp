#pragma once

// Unsupervised domain discovery: a user/word co-occurrence graph over the
// training pool, Louvain communities, and per-record soft memberships.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "fnd/ingest.hpp"
#include "fnd/parallel.hpp"

namespace fnd {

/// Undirected graph with positive integer edge weights. Nodes are kept in
/// ascending id order, so node index order equals id order.
struct HeteroGraph {
  struct Edge {
    std::size_t to;
    std::int64_t weight;
  };

  std::vector<std::string> nodes;
  std::vector<std::vector<Edge>> adj;  // sorted by neighbour, no self-loops
  std::vector<std::int64_t> degree;    // sum of incident edge weights
  std::int64_t total_weight = 0;       // m: each edge counted once

  std::size_t node_count() const { return nodes.size(); }
  std::size_t edge_count() const;
  std::optional<std::size_t> find(const std::string& id) const;
  std::int64_t weight(std::size_t a, std::size_t b) const;

  /// Builds a graph from (a, b, w) triples; repeated pairs accumulate.
  /// Nodes listed in `nodes` but without edges stay isolated.
  static HeteroGraph from_edges(std::vector<std::string> nodes,
                                const std::vector<std::tuple<std::string, std::string,
                                                             std::int64_t>>& edges);
};

/// Community assignment in canonical order: communities sorted by
/// descending total degree, ties by smallest member index.
struct Partition {
  std::vector<std::size_t> community;  // per node
  std::size_t count = 0;

  std::vector<std::vector<std::size_t>> members() const;
};

struct LouvainResult {
  Partition partition;
  /// Modularity of the singleton start and after every aggregation level.
  std::vector<double> level_modularity;
};

/// Namespaced items of a record: "user:<id>" for users of tweets inside the
/// detection window and "word:<token>" for distinct title tokens. Sorted.
std::vector<std::string> record_items(const RecordView& r, std::int64_t delta_t);

HeteroGraph build_cooccurrence_graph(std::span<const RecordView> records, std::int64_t delta_t,
                                     Exec exec = Exec::kParallel);

LouvainResult louvain_detailed(const HeteroGraph& g);
Partition louvain(const HeteroGraph& g);

/// Q = sum_c [w_in(c)/m - (deg(c)/2m)^2]. Throws if m = 0.
double modularity(const HeteroGraph& g, const Partition& p);

/// Puts an arbitrary labelling (one label per node) into canonical order.
Partition canonical_partition(const HeteroGraph& g, std::span<const std::size_t> labels);

/// Stable identifier of a partition's community ordering.
std::string partition_fingerprint(const HeteroGraph& g, const Partition& p);

/// Degree-weighted share of a record's graph-present items per community;
/// uniform 1/|C| if no item is present.
std::vector<double> soft_membership(std::span<const std::string> items, const HeteroGraph& g,
                                    const Partition& p);

struct DomainEmbedding {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().size(); }
};

DomainEmbedding domain_embed(std::span<const RecordView> records, const HeteroGraph& g,
                             const Partition& p, std::int64_t delta_t,
                             Exec exec = Exec::kParallel);

/// User-Jaccard record graph (edge if Jaccard > alpha), Louvain, then each
/// record's cosine similarity of one-hot community indicators against every
/// record.
DomainEmbedding baseline_jaccard_embed(std::span<const RecordView> records, double alpha,
                                       std::int64_t delta_t);

}  // namespace fnd
