#include "fnd/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <queue>
#include <sstream>

#include "fnd/csv.hpp"
#include "fnd/error.hpp"
#include "fnd/random.hpp"

namespace fnd {

// ---------------------------------------------------------------------------
// Lexicon

SentimentLexicon SentimentLexicon::builtin() {
  SentimentLexicon lex;
  lex.positive = {"good", "great", "love", "happy", "win", "support", "best", "hope",
                  "true", "excellent", "amazing", "safe", "success", "glad"};
  lex.negative = {"bad", "fake", "hoax", "hate", "terrible", "lie", "wrong", "scam",
                  "worst", "angry", "fraud", "false", "dangerous", "sad"};
  return lex;
}

SentimentLexicon SentimentLexicon::parse(std::istream& in) {
  SentimentLexicon lex;
  std::unordered_set<std::string>* target = nullptr;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    if (toks.size() == 1 && toks[0] == "positive:") {
      target = &lex.positive;
    } else if (toks.size() == 1 && toks[0] == "negative:") {
      target = &lex.negative;
    } else if (toks.size() == 1 && target != nullptr) {
      target->insert(toks[0]);
    } else {
      throw DataError("lexicon line " + std::to_string(line_no) +
                      ": expected a section header or a single word");
    }
  }
  return lex;
}

SentimentLexicon SentimentLexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon " + path);
  return parse(in);
}

// ---------------------------------------------------------------------------
// Propagation network

std::size_t PropagationNetwork::edge_count() const {
  std::size_t e = 0;
  for (const auto& o : out) e += o.size();
  return e;
}

PropagationNetwork build_propagation_graph(const RecordView& r, std::int64_t delta_t,
                                           const SentimentLexicon& lexicon, EdgeMode mode) {
  if (delta_t <= 0) throw UsageError("delta_t must be positive");
  PropagationNetwork net;
  net.record_id = r.id();
  net.published_at = r.published_at();
  net.delta_t = delta_t;

  const std::int64_t lo = r.published_at();
  const std::int64_t hi = r.published_at() + delta_t;
  for (const auto& tw : r.cascade()) {
    if (tw.timestamp >= lo && tw.timestamp <= hi) net.tweets.push_back(tw);
  }

  const std::size_t n = net.node_count();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < net.tweets.size(); ++i) index.emplace(net.tweets[i].tweet_id, i + 1);

  std::vector<std::vector<std::size_t>> in(n);
  for (std::size_t j = 1; j < n; ++j) {
    const auto& tj = net.tweets[j - 1];
    if (tj.parent) {
      auto it = index.find(*tj.parent);
      if (it != index.end() && it->second != j) in[j].push_back(it->second);
      continue;
    }
    if (mode != EdgeMode::kParentsAndRules) continue;
    for (std::size_t i = 1; i < n; ++i) {
      if (i == j) continue;
      const auto& ti = net.tweets[i - 1];
      const bool mentions =
          std::find(ti.mentions.begin(), ti.mentions.end(), tj.user_id) != ti.mentions.end();
      const std::int64_t dt = tj.timestamp - ti.timestamp;
      const bool window = ti.is_public && dt > 0 && dt <= delta_t;
      if (mentions || window) in[j].push_back(i);
    }
  }
  for (std::size_t j = 1; j < n; ++j) {
    if (in[j].empty()) in[j].push_back(0);
  }

  net.out.assign(n, {});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i : in[j]) net.out[i].push_back(j);
  }
  for (auto& o : net.out) std::sort(o.begin(), o.end());
  net.in = std::move(in);
  for (auto& v : net.in) std::sort(v.begin(), v.end());

  net.attributes.assign(n, NodeFeatureVector{});
  for (std::size_t v = 1; v < n; ++v) net.attributes[v] = node_features(v, net, lexicon);
  return net;
}

NodeFeatureVector node_features(std::size_t node, const PropagationNetwork& net,
                                const SentimentLexicon& lexicon) {
  NodeFeatureVector x{};
  if (node == 0) return x;
  const auto& tw = net.tweets.at(node - 1);
  const auto t = static_cast<double>(tw.timestamp);

  x[0] = tw.user_verified ? 1.0 : 0.0;
  x[1] = static_cast<double>(tw.followers);
  x[2] = static_cast<double>(tw.friends);
  x[3] = static_cast<double>(tw.lists);
  x[4] = static_cast<double>(tw.favourites);
  if (tw.text) {
    const auto tokens = tokenize(*tw.text);
    if (!tokens.empty()) {
      double pos = 0, neg = 0;
      for (const auto& tok : tokens) {
        if (lexicon.positive.contains(tok)) pos += 1;
        if (lexicon.negative.contains(tok)) neg += 1;
      }
      const auto count = static_cast<double>(tokens.size());
      x[5] = (pos - neg) / std::max(1.0, count);
      x[6] = pos / count;
      x[7] = neg / count;
    }
  }
  x[8] = static_cast<double>(tw.mentions.size());
  x[9] = static_cast<double>(tw.hashtags.size());
  x[10] = t - static_cast<double>(net.published_at);

  // Immediate predecessor: the latest in-neighbour.
  if (net.in[node].empty()) {
    x[11] = x[10];
  } else {
    std::int64_t pred = net.timestamp(net.in[node].front());
    for (std::size_t u : net.in[node]) pred = std::max(pred, net.timestamp(u));
    x[11] = t - static_cast<double>(pred);
  }
  if (!net.out[node].empty()) {
    double sum = 0;
    for (std::size_t u : net.out[node]) sum += static_cast<double>(net.timestamp(u)) - t;
    x[12] = sum / static_cast<double>(net.out[node].size());
  }
  x[13] = static_cast<double>(tw.user_created_at);
  return x;
}

// ---------------------------------------------------------------------------
// Global features

namespace {

std::vector<int> bfs_levels(const std::vector<std::vector<std::size_t>>& adj, std::size_t src) {
  std::vector<int> level(adj.size(), -1);
  std::queue<std::size_t> q;
  level[src] = 0;
  q.push(src);
  while (!q.empty()) {
    const auto v = q.front();
    q.pop();
    for (auto u : adj[v]) {
      if (level[u] < 0) {
        level[u] = level[v] + 1;
        q.push(u);
      }
    }
  }
  return level;
}

}  // namespace

double wiener_index(const PropagationNetwork& net) {
  const std::size_t n = net.node_count();
  std::vector<std::vector<std::size_t>> undirected(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (auto u : net.out[v]) {
      undirected[v].push_back(u);
      undirected[u].push_back(v);
    }
  }
  double total = 0;
  for (std::size_t v = 0; v < n; ++v) {
    const auto level = bfs_levels(undirected, v);
    for (std::size_t u = v + 1; u < n; ++u) {
      if (level[u] > 0) total += level[u];
    }
  }
  return total;
}

std::vector<double> GlobalFeatureVector::flatten() const {
  std::vector<double> v{wiener_index, node_count, depth};
  v.insert(v.end(), nodes_per_hop.begin(), nodes_per_hop.end());
  v.insert(v.end(), branching_per_level.begin(), branching_per_level.end());
  v.push_back(max_outdegree);
  v.push_back(propagation_speed);
  return v;
}

GlobalFeatureVector global_features(const PropagationNetwork& net, std::size_t hop_levels) {
  GlobalFeatureVector g;
  const std::size_t n = net.node_count();
  g.wiener_index = wiener_index(net);
  g.node_count = static_cast<double>(n);
  g.nodes_per_hop.assign(hop_levels, 0.0);
  g.branching_per_level.assign(hop_levels, 0.0);

  const auto level = bfs_levels(net.out, 0);
  std::vector<double> level_nodes(hop_levels, 0.0);
  int depth = 0;
  for (std::size_t v = 0; v < n; ++v) {
    const int l = level[v];
    g.max_outdegree = std::max(g.max_outdegree, static_cast<double>(net.out[v].size()));
    if (l < 0) continue;
    depth = std::max(depth, l);
    if (l >= 1 && static_cast<std::size_t>(l) <= hop_levels) g.nodes_per_hop[l - 1] += 1;
    if (static_cast<std::size_t>(l) < hop_levels) {
      level_nodes[l] += 1;
      g.branching_per_level[l] += static_cast<double>(net.out[v].size());
    }
  }
  for (std::size_t l = 0; l < hop_levels; ++l) {
    if (level_nodes[l] > 0) g.branching_per_level[l] /= level_nodes[l];
  }
  g.depth = depth;

  if (!net.tweets.empty()) {
    std::int64_t first = net.tweets.front().timestamp, last = first;
    for (const auto& tw : net.tweets) {
      first = std::min(first, tw.timestamp);
      last = std::max(last, tw.timestamp);
    }
    const double span_hours = static_cast<double>(last - first) / 3600.0;
    g.propagation_speed = static_cast<double>(n - 1) / std::max(kMinSpanHours, span_hours);
  }
  return g;
}

NodeFeatureVector local_aggregate(const PropagationNetwork& net, int iterations) {
  if (iterations < 1) throw UsageError("local_aggregate needs at least one iteration");
  const std::size_t n = net.node_count();
  std::vector<NodeFeatureVector> h = net.attributes;
  std::vector<NodeFeatureVector> next(n);
  for (int t = 0; t < iterations; ++t) {
    for (std::size_t v = 0; v < n; ++v) {
      const auto& succ = net.out[v];
      if (succ.empty()) {
        next[v] = h[v];
        continue;
      }
      NodeFeatureVector mean{};
      for (auto u : succ) {
        for (std::size_t d = 0; d < kNodeFeatureCount; ++d) mean[d] += h[u][d];
      }
      const auto k = static_cast<double>(succ.size());
      for (std::size_t d = 0; d < kNodeFeatureCount; ++d) {
        next[v][d] = 0.5 * h[v][d] + 0.5 * (mean[d] / k);
      }
    }
    std::swap(h, next);
  }
  return h[0];
}

std::vector<std::string> network_feature_names(std::size_t hop_levels) {
  std::vector<std::string> names{"wiener_index", "node_count", "depth"};
  for (std::size_t h = 1; h <= hop_levels; ++h) names.push_back("hop" + std::to_string(h) + "_nodes");
  for (std::size_t l = 0; l < hop_levels; ++l) names.push_back("level" + std::to_string(l) + "_branching");
  names.push_back("max_outdegree");
  names.push_back("propagation_speed");
  static constexpr const char* kLocal[] = {
      "verified",   "followers",  "friends",       "lists",         "favourites",
      "sentiment",  "pos_ratio",  "neg_ratio",     "mentions",      "hashtags",
      "dt_source",  "dt_parent",  "dt_successors", "account_created"};
  for (const char* name : kLocal) names.push_back(std::string("local_") + name);
  return names;
}

// ---------------------------------------------------------------------------
// Text

std::vector<double> text_features_hashing(const std::string& title, std::size_t dim,
                                          std::uint64_t seed) {
  if (dim < 2) throw UsageError("hashing text features need dim >= 2");
  std::vector<double> v(dim, 0.0);
  for (const auto& tok : tokenize(title)) {
    const std::uint64_t h = fnv1a64(tok, seed);
    const std::size_t idx = h % dim;
    const double sign = (splitmix64(h) >> 63) ? -1.0 : 1.0;
    v[idx] += sign;
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  if (norm > 0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

TextEncoder TextEncoder::hashing(std::size_t dim, std::uint64_t seed) {
  if (dim < 2) throw UsageError("hashing text features need dim >= 2");
  TextEncoder enc;
  enc.dim_ = dim;
  enc.seed_ = seed;
  return enc;
}

TextEncoder TextEncoder::lookup(std::unordered_map<std::string, std::vector<double>> table) {
  if (table.empty()) throw UsageError("empty text embedding table");
  TextEncoder enc;
  enc.dim_ = table.begin()->second.size();
  for (const auto& [id, vec] : table) {
    if (vec.size() != enc.dim_) throw DataError("text embedding for " + id + " has wrong length");
  }
  enc.table_ = std::make_shared<const std::unordered_map<std::string, std::vector<double>>>(
      std::move(table));
  return enc;
}

TextEncoder TextEncoder::lookup_csv(const std::string& path) {
  const CsvTable csv = read_csv(path);
  std::unordered_map<std::string, std::vector<double>> table;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    std::vector<double> v;
    for (std::size_t c = 1; c < row.size(); ++c) v.push_back(csv_to_double(row[c], path, r + 2));
    if (!table.emplace(row.at(0), std::move(v)).second) {
      throw DataError(path + ": duplicate id " + row.at(0));
    }
  }
  return lookup(std::move(table));
}

std::vector<double> TextEncoder::encode(const std::string& record_id,
                                        const std::string& title) const {
  if (!table_) return text_features_hashing(title, dim_, seed_);
  auto it = table_->find(record_id);
  if (it == table_->end()) throw DataError("no text embedding for record " + record_id);
  return it->second;
}

// ---------------------------------------------------------------------------
// Standardizer / assembly

Standardizer Standardizer::fit(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw UsageError("cannot fit a standardizer on zero rows");
  const std::size_t d = rows.front().size();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (const auto& row : rows) {
    if (row.size() != d) throw UsageError("standardizer rows differ in dimension");
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += row[j];
  }
  const auto n = static_cast<double>(rows.size());
  for (double& m : s.mean) m /= n;
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < d; ++j) {
      const double e = row[j] - s.mean[j];
      s.stddev[j] += e * e;
    }
  }
  for (double& v : s.stddev) {
    v = std::sqrt(v / n);
    if (!(v > 0.0)) v = 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
  if (x.size() != mean.size()) {
    throw UsageError("standardizer expects dimension " + std::to_string(mean.size()) + ", got " +
                     std::to_string(x.size()));
  }
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / stddev[j];
  return out;
}

InputVector assemble_input(std::span<const double> text, std::span<const double> network) {
  InputVector v;
  v.text_dim = text.size();
  v.values.reserve(text.size() + network.size());
  v.values.insert(v.values.end(), text.begin(), text.end());
  v.values.insert(v.values.end(), network.begin(), network.end());
  return v;
}

FeatureTable extract_features(std::span<const RecordView> records, const FeatureConfig& cfg,
                              const SentimentLexicon& lexicon, const TextEncoder& text,
                              Exec exec) {
  FeatureTable t;
  const std::size_t n = records.size();
  t.ids.resize(n);
  t.text.resize(n);
  t.network.resize(n);
  t.global.resize(n);
  parallel_for(n, exec, [&](std::size_t i) {
    const auto& r = records[i];
    const auto net = build_propagation_graph(r, cfg.delta_t, lexicon, cfg.edge_mode);
    t.global[i] = global_features(net, cfg.hop_levels);
    auto row = t.global[i].flatten();
    const auto local = local_aggregate(net, cfg.aggregation_iters);
    row.insert(row.end(), local.begin(), local.end());
    t.ids[i] = r.id();
    t.network[i] = std::move(row);
    t.text[i] = text.encode(r.id(), r.title());
  });
  return t;
}

}  // namespace fnd
