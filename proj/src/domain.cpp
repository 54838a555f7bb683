#include "fnd/domain.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "fnd/error.hpp"
#include "fnd/random.hpp"

namespace fnd {

std::size_t HeteroGraph::edge_count() const {
  std::size_t e = 0;
  for (const auto& a : adj) e += a.size();
  return e / 2;
}

std::optional<std::size_t> HeteroGraph::find(const std::string& id) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), id);
  if (it == nodes.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - nodes.begin());
}

std::int64_t HeteroGraph::weight(std::size_t a, std::size_t b) const {
  const auto& row = adj.at(a);
  auto it = std::lower_bound(row.begin(), row.end(), b,
                             [](const Edge& e, std::size_t v) { return e.to < v; });
  return (it != row.end() && it->to == b) ? it->weight : 0;
}

namespace {

HeteroGraph assemble(std::vector<std::string> nodes,
                     const std::unordered_map<std::uint64_t, std::int64_t>& pair_weights) {
  HeteroGraph g;
  const std::size_t n = nodes.size();
  g.nodes = std::move(nodes);
  g.adj.assign(n, {});
  g.degree.assign(n, 0);
  for (const auto& [key, w] : pair_weights) {
    const auto a = static_cast<std::size_t>(key / n);
    const auto b = static_cast<std::size_t>(key % n);
    g.adj[a].push_back({b, w});
    g.adj[b].push_back({a, w});
    g.degree[a] += w;
    g.degree[b] += w;
    g.total_weight += w;
  }
  for (auto& row : g.adj) {
    std::sort(row.begin(), row.end(), [](const auto& x, const auto& y) { return x.to < y.to; });
  }
  return g;
}

}  // namespace

HeteroGraph HeteroGraph::from_edges(
    std::vector<std::string> nodes,
    const std::vector<std::tuple<std::string, std::string, std::int64_t>>& edges) {
  for (const auto& [a, b, w] : edges) {
    nodes.push_back(a);
    nodes.push_back(b);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  const std::uint64_t n = nodes.size();
  auto index = [&](const std::string& id) {
    return static_cast<std::uint64_t>(std::lower_bound(nodes.begin(), nodes.end(), id) -
                                      nodes.begin());
  };
  std::unordered_map<std::uint64_t, std::int64_t> weights;
  for (const auto& [a, b, w] : edges) {
    if (a == b) throw UsageError("self-loop on node " + a);
    if (w < 1) throw UsageError("edge weights must be >= 1");
    auto i = index(a), j = index(b);
    if (i > j) std::swap(i, j);
    weights[i * n + j] += w;
  }
  return assemble(std::move(nodes), weights);
}

std::vector<std::vector<std::size_t>> Partition::members() const {
  std::vector<std::vector<std::size_t>> out(count);
  for (std::size_t v = 0; v < community.size(); ++v) out[community[v]].push_back(v);
  return out;
}

std::vector<std::string> record_items(const RecordView& r, std::int64_t delta_t) {
  std::set<std::string> items;
  const std::int64_t lo = r.published_at(), hi = r.published_at() + delta_t;
  for (const auto& tw : r.cascade()) {
    if (tw.timestamp >= lo && tw.timestamp <= hi) items.insert("user:" + tw.user_id);
  }
  for (auto& tok : tokenize(r.title())) items.insert("word:" + tok);
  return {items.begin(), items.end()};
}

HeteroGraph build_cooccurrence_graph(std::span<const RecordView> records, std::int64_t delta_t,
                                     Exec exec) {
  if (records.empty()) throw UsageError("cannot build a co-occurrence graph from zero records");
  std::vector<std::vector<std::string>> item_sets(records.size());
  parallel_for(records.size(), exec,
               [&](std::size_t i) { item_sets[i] = record_items(records[i], delta_t); });

  std::vector<std::string> nodes;
  for (const auto& s : item_sets) {
    if (s.size() >= 2) nodes.insert(nodes.end(), s.begin(), s.end());
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  const std::uint64_t n = nodes.size();

  // Pair accumulation is a commutative sum, so record order does not matter.
  std::unordered_map<std::uint64_t, std::int64_t> weights;
  std::vector<std::uint64_t> idx;
  for (const auto& s : item_sets) {
    if (s.size() < 2) continue;
    idx.clear();
    for (const auto& item : s) {
      idx.push_back(static_cast<std::uint64_t>(
          std::lower_bound(nodes.begin(), nodes.end(), item) - nodes.begin()));
    }
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) weights[idx[a] * n + idx[b]] += 1;
    }
  }
  return assemble(std::move(nodes), weights);
}

// ---------------------------------------------------------------------------
// Louvain

namespace {

// Working graph of one Louvain level. All arithmetic is on integers, so
// modularity gains are compared exactly.
struct LevelGraph {
  std::vector<std::vector<HeteroGraph::Edge>> adj;  // no self-loops
  std::vector<std::int64_t> self;                   // internal weight, each edge once
  std::vector<std::int64_t> k;                      // weighted degree, self-loops twice
};

LevelGraph level_from(const HeteroGraph& g) {
  LevelGraph lg;
  lg.adj = g.adj;
  lg.self.assign(g.node_count(), 0);
  lg.k = g.degree;
  return lg;
}

// One round of local moving. Returns the community of each node (ids are node
// indices of the community's founding node) and whether anything moved.
bool local_moving(const LevelGraph& lg, std::int64_t two_m, std::vector<std::size_t>& comm) {
  const std::size_t n = lg.adj.size();
  comm.resize(n);
  std::iota(comm.begin(), comm.end(), std::size_t{0});
  std::vector<std::int64_t> tot = lg.k;
  std::vector<std::int64_t> link(n, 0);
  std::vector<std::size_t> touched;
  bool any_move = false;
  bool moved = true;
  while (moved) {
    moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      touched.clear();
      for (const auto& e : lg.adj[i]) {
        const std::size_t c = comm[e.to];
        if (link[c] == 0) touched.push_back(c);
        link[c] += e.weight;
      }
      const std::size_t old = comm[i];
      tot[old] -= lg.k[i];
      // Gain of inserting i into c, scaled by 2m: 2m*k_i,in(c) - tot(c)*k_i.
      auto gain = [&](std::size_t c) { return two_m * link[c] - tot[c] * lg.k[i]; };
      std::size_t best = old;
      std::int64_t best_gain = gain(old);
      std::sort(touched.begin(), touched.end());
      for (std::size_t c : touched) {
        if (c == old) continue;
        const std::int64_t gc = gain(c);
        if (gc > best_gain) {
          best_gain = gc;
          best = c;
        }
      }
      tot[best] += lg.k[i];
      comm[i] = best;
      if (best != old) {
        moved = true;
        any_move = true;
      }
      for (std::size_t c : touched) link[c] = 0;
    }
  }
  return any_move;
}

// Collapses communities into super-nodes, numbered by first appearance.
LevelGraph aggregate(const LevelGraph& lg, std::vector<std::size_t>& comm) {
  const std::size_t n = lg.adj.size();
  std::vector<std::size_t> renum(n, SIZE_MAX);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (renum[comm[i]] == SIZE_MAX) renum[comm[i]] = next++;
  }
  for (auto& c : comm) c = renum[c];

  LevelGraph out;
  out.self.assign(next, 0);
  out.k.assign(next, 0);
  std::vector<std::map<std::size_t, std::int64_t>> links(next);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ci = comm[i];
    out.self[ci] += lg.self[i];
    out.k[ci] += lg.k[i];
    for (const auto& e : lg.adj[i]) {
      const std::size_t cj = comm[e.to];
      if (cj == ci) {
        if (i < e.to) out.self[ci] += e.weight;
      } else {
        links[ci][cj] += e.weight;
      }
    }
  }
  out.adj.resize(next);
  for (std::size_t c = 0; c < next; ++c) {
    for (const auto& [to, w] : links[c]) out.adj[c].push_back({to, w});
  }
  return out;
}

}  // namespace

Partition canonical_partition(const HeteroGraph& g, std::span<const std::size_t> labels) {
  if (labels.size() != g.node_count()) throw UsageError("labelling does not cover the graph");
  std::map<std::size_t, std::size_t> dense;
  for (auto l : labels) dense.emplace(l, dense.size());
  const std::size_t count = dense.size();
  std::vector<std::int64_t> deg(count, 0);
  std::vector<std::size_t> first(count, SIZE_MAX);
  for (std::size_t v = 0; v < labels.size(); ++v) {
    const std::size_t c = dense[labels[v]];
    deg[c] += g.degree[v];
    first[c] = std::min(first[c], v);
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (deg[a] != deg[b]) return deg[a] > deg[b];
    return first[a] < first[b];
  });
  std::vector<std::size_t> rank(count);
  for (std::size_t r = 0; r < count; ++r) rank[order[r]] = r;

  Partition p;
  p.count = count;
  p.community.resize(labels.size());
  for (std::size_t v = 0; v < labels.size(); ++v) p.community[v] = rank[dense[labels[v]]];
  return p;
}

LouvainResult louvain_detailed(const HeteroGraph& g) {
  const std::size_t n = g.node_count();
  std::vector<std::size_t> assignment(n);
  std::iota(assignment.begin(), assignment.end(), std::size_t{0});
  LouvainResult result;
  if (g.total_weight == 0) {
    result.partition = canonical_partition(g, assignment);
    return result;
  }

  const std::int64_t two_m = 2 * g.total_weight;
  result.level_modularity.push_back(modularity(g, canonical_partition(g, assignment)));
  LevelGraph lg = level_from(g);
  std::vector<std::size_t> comm;
  while (true) {
    if (!local_moving(lg, two_m, comm)) break;
    lg = aggregate(lg, comm);
    for (auto& a : assignment) a = comm[a];
    result.level_modularity.push_back(modularity(g, canonical_partition(g, assignment)));
    if (lg.adj.size() == 1) break;
  }
  result.partition = canonical_partition(g, assignment);
  return result;
}

Partition louvain(const HeteroGraph& g) { return louvain_detailed(g).partition; }

double modularity(const HeteroGraph& g, const Partition& p) {
  if (g.total_weight == 0) throw UsageError("modularity is undefined for a graph without edges");
  if (p.community.size() != g.node_count()) throw UsageError("partition does not cover the graph");
  std::vector<double> w_in(p.count, 0.0), deg(p.count, 0.0);
  for (std::size_t v = 0; v < g.node_count(); ++v) {
    const std::size_t c = p.community[v];
    deg[c] += static_cast<double>(g.degree[v]);
    for (const auto& e : g.adj[v]) {
      if (e.to > v && p.community[e.to] == c) w_in[c] += static_cast<double>(e.weight);
    }
  }
  const auto m = static_cast<double>(g.total_weight);
  double q = 0;
  for (std::size_t c = 0; c < p.count; ++c) {
    const double share = deg[c] / (2.0 * m);
    q += w_in[c] / m - share * share;
  }
  return q;
}

std::string partition_fingerprint(const HeteroGraph& g, const Partition& p) {
  std::string canon = std::to_string(p.count) + ";";
  const auto members = p.members();
  for (const auto& mem : members) {
    std::int64_t deg = 0;
    for (auto v : mem) deg += g.degree[v];
    canon += g.nodes[mem.front()] + ":" + std::to_string(mem.size()) + ":" + std::to_string(deg) + ";";
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
  return buf;
}

// ---------------------------------------------------------------------------
// Embeddings

std::vector<double> soft_membership(std::span<const std::string> items, const HeteroGraph& g,
                                    const Partition& p) {
  if (p.count == 0) throw UsageError("partition has no communities");
  std::vector<double> v(p.count, 0.0);
  double total = 0;
  for (const auto& item : items) {
    const auto node = g.find(item);
    if (!node) continue;
    const auto deg = static_cast<double>(g.degree[*node]);
    v[p.community[*node]] += deg;
    total += deg;
  }
  if (total > 0) {
    for (double& x : v) x /= total;
  } else {
    std::fill(v.begin(), v.end(), 1.0 / static_cast<double>(p.count));
  }
  return v;
}

DomainEmbedding domain_embed(std::span<const RecordView> records, const HeteroGraph& g,
                             const Partition& p, std::int64_t delta_t, Exec exec) {
  DomainEmbedding emb;
  emb.ids.resize(records.size());
  emb.rows.resize(records.size());
  parallel_for(records.size(), exec, [&](std::size_t i) {
    emb.ids[i] = records[i].id();
    emb.rows[i] = soft_membership(record_items(records[i], delta_t), g, p);
  });
  return emb;
}

DomainEmbedding baseline_jaccard_embed(std::span<const RecordView> records, double alpha,
                                       std::int64_t delta_t) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in (0, 1]");
  const std::size_t n = records.size();
  std::vector<std::vector<std::string>> users(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& item : record_items(records[i], delta_t)) {
      if (item.starts_with("user:")) users[i].push_back(std::move(item));
    }
  }
  // Zero-padded names keep node index order equal to record order.
  std::vector<std::string> names(n);
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "r%012zu", i);
    names[i] = buf;
  }
  std::vector<std::tuple<std::string, std::string, std::int64_t>> edges;
  std::vector<std::string> common;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (users[i].empty() && users[j].empty()) continue;
      common.clear();
      std::set_intersection(users[i].begin(), users[i].end(), users[j].begin(), users[j].end(),
                            std::back_inserter(common));
      const double inter = static_cast<double>(common.size());
      const double uni = static_cast<double>(users[i].size() + users[j].size()) - inter;
      if (inter / uni > alpha) edges.emplace_back(names[i], names[j], 1);
    }
  }
  const HeteroGraph g = HeteroGraph::from_edges(names, edges);
  const Partition p = louvain(g);

  DomainEmbedding emb;
  emb.ids.resize(n);
  emb.rows.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    emb.ids[i] = records[i].id();
    // Cosine of two one-hot vectors is 1 if they match, else 0.
    for (std::size_t j = 0; j < n; ++j) {
      emb.rows[i][j] = p.community[i] == p.community[j] ? 1.0 : 0.0;
    }
  }
  return emb;
}

}  // namespace fnd
