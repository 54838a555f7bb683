#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "fnd/error.hpp"
#include "fnd/features.hpp"
#include "fnd/random.hpp"

using namespace fnd;

namespace {

constexpr std::int64_t kT0 = 1'000'000;

CascadeNode tweet(const std::string& id, std::int64_t t, std::optional<std::string> parent = {}) {
  CascadeNode c;
  c.tweet_id = id;
  c.user_id = "u_" + id;
  c.timestamp = t;
  c.parent = std::move(parent);
  return c;
}

NewsRecord record(std::vector<CascadeNode> cascade, std::string title = "a title") {
  NewsRecord r;
  r.id = "r1";
  r.published_at = kT0;
  r.title = std::move(title);
  r.cascade = std::move(cascade);
  return r;
}

PropagationNetwork build(const NewsRecord& r, EdgeMode mode = EdgeMode::kParents,
                         std::int64_t delta_t = 18000) {
  return build_propagation_graph(RecordView(r), delta_t, SentimentLexicon::builtin(), mode);
}

/// Floyd-Warshall over the undirected network.
double wiener_oracle(const PropagationNetwork& net) {
  const std::size_t n = net.node_count();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
  for (std::size_t v = 0; v < n; ++v) {
    d[v][v] = 0;
    for (auto u : net.out[v]) d[v][u] = d[u][v] = 1;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (d[i][j] < inf) s += d[i][j];
  return s;
}

}  // namespace

TEST_CASE("parent chain builds a path from the source") {
  const auto net = build(record({tweet("a", kT0 + 10), tweet("b", kT0 + 20, "a")}));
  REQUIRE(net.node_count() == 3);
  CHECK(net.out[0] == std::vector<std::size_t>{1});
  CHECK(net.out[1] == std::vector<std::size_t>{2});
  CHECK(net.out[2].empty());
  CHECK(net.in[0].empty());
}

TEST_CASE("detection window cut-off") {
  const auto net = build(record({tweet("a", kT0 + 18000), tweet("b", kT0 + 18001),
                                 tweet("c", kT0 - 1)}));
  REQUIRE(net.tweets.size() == 1);
  CHECK(net.tweets[0].tweet_id == "a");
}

TEST_CASE("empty cascade gives a source-only network") {
  const auto net = build(record({}));
  CHECK(net.node_count() == 1);
  const auto g = global_features(net, 5);
  CHECK(g.wiener_index == 0);
  CHECK(g.depth == 0);
  CHECK(g.propagation_speed == 0);
  const auto agg = local_aggregate(net, 3);
  for (double v : agg) CHECK(v == 0.0);
}

TEST_CASE("rule edges between two parentless public tweets") {
  const auto r = record({tweet("a", kT0 + 60), tweet("b", kT0 + 660)});
  const auto plain = build(r);
  CHECK(plain.out[0] == std::vector<std::size_t>{1, 2});
  CHECK(plain.edge_count() == 2);

  const auto ruled = build(r, EdgeMode::kParentsAndRules);
  // a -> b by the time window; only a has in-degree 0, so the source links to a.
  CHECK(ruled.out[1] == std::vector<std::size_t>{2});
  CHECK(ruled.out[0] == std::vector<std::size_t>{1});
  CHECK(ruled.edge_count() == 2);
}

TEST_CASE("mention rule and private tweets") {
  auto a = tweet("a", kT0 + 100);
  auto b = tweet("b", kT0 + 50);
  a.is_public = false;
  a.mentions = {"u_b"};
  const auto net = build(record({a, b}), EdgeMode::kParentsAndRules);
  // a mentions b's user: a -> b even though b is earlier. b -> a by window.
  CHECK(net.out[1] == std::vector<std::size_t>{2});
  CHECK(net.out[2] == std::vector<std::size_t>{1});
  CHECK(net.out[0].empty());
}

TEST_CASE("node features") {
  auto a = tweet("a", kT0 + 600);
  a.user_verified = true;
  a.followers = 10;
  auto b = tweet("b", kT0 + 900, "a");
  b.text = "good good bad";
  b.mentions = {"x", "y"};
  b.hashtags = {"h"};
  auto c = tweet("c", kT0 + 1500, "a");
  const auto net = build(record({a, b, c}));
  const auto& xa = net.attributes[1];
  CHECK(xa[0] == 1.0);
  CHECK(xa[1] == 10.0);
  CHECK(xa[5] == 0.0);
  CHECK(xa[6] == 0.0);
  CHECK(xa[7] == 0.0);
  CHECK(xa[10] == 600.0);
  CHECK(xa[11] == 600.0);
  CHECK(xa[12] == doctest::Approx((300.0 + 900.0) / 2));
  const auto& xb = net.attributes[2];
  CHECK(xb[5] == doctest::Approx(1.0 / 3));
  CHECK(xb[6] == doctest::Approx(2.0 / 3));
  CHECK(xb[7] == doctest::Approx(1.0 / 3));
  CHECK(xb[8] == 2.0);
  CHECK(xb[9] == 1.0);
  CHECK(xb[10] == 900.0);
  CHECK(xb[11] == 300.0);
  CHECK(xb[12] == 0.0);
  for (double v : net.attributes[0]) CHECK(v == 0.0);
}

TEST_CASE("global features of small shapes") {
  const auto path = build(record({tweet("a", kT0 + 10), tweet("b", kT0 + 20, "a")}));
  auto g = global_features(path, 5);
  CHECK(g.wiener_index == 4);
  CHECK(g.depth == 2);
  CHECK(g.node_count == 3);
  CHECK(g.nodes_per_hop == std::vector<double>{1, 1, 0, 0, 0});

  const auto star = build(record({tweet("a", kT0 + 10), tweet("b", kT0 + 20),
                                  tweet("c", kT0 + 3610)}));
  g = global_features(star, 5);
  CHECK(g.max_outdegree == 3);
  CHECK(g.branching_per_level[0] == 3);
  CHECK(g.branching_per_level[1] == 0);
  CHECK(g.propagation_speed == doctest::Approx(3.0 / 1.0));
  CHECK(g.flatten().size() == 3 + 5 + 5 + 2);
  CHECK(network_feature_names(5).size() == g.flatten().size() + kNodeFeatureCount);

  // All tweets at one instant: the span is floored at one minute.
  const auto burst = build(record({tweet("a", kT0 + 5), tweet("b", kT0 + 5)}));
  CHECK(global_features(burst, 5).propagation_speed == doctest::Approx(2.0 / kMinSpanHours));
}

TEST_CASE("Wiener index matches Floyd-Warshall on random trees and rule graphs") {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng.index(30);
    std::vector<CascadeNode> c;
    for (std::size_t i = 0; i < n; ++i) {
      std::optional<std::string> parent;
      if (i > 0 && rng.bernoulli(0.7)) parent = "t" + std::to_string(rng.index(i));
      c.push_back(tweet("t" + std::to_string(i), kT0 + static_cast<std::int64_t>(rng.index(5000)),
                        parent));
    }
    const auto r = record(c);
    const auto tree = build(r);
    CHECK(wiener_index(tree) == wiener_oracle(tree));
    const auto ruled = build(r, EdgeMode::kParentsAndRules, 600);
    CHECK(wiener_index(ruled) == wiener_oracle(ruled));
    const auto g = global_features(tree, 5);
    CHECK(g.depth <= g.node_count - 1);
    if (g.depth < 5) {
      double s = 0;
      for (double h : g.nodes_per_hop) s += h;
      CHECK(s == g.node_count - 1);
    }
  }
}

TEST_CASE("local aggregation by hand") {
  PropagationNetwork net;
  net.tweets.resize(1);
  net.out = {{1}, {}};
  net.in = {{}, {0}};
  NodeFeatureVector one;
  one.fill(1.0);
  net.attributes = {NodeFeatureVector{}, one};
  for (double v : local_aggregate(net, 1)) CHECK(v == 0.5);
  for (double v : local_aggregate(net, 2)) CHECK(v == 0.75);
  CHECK_THROWS_AS(local_aggregate(net, 0), UsageError);
}

TEST_CASE("local aggregation properties") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<CascadeNode> c;
    const std::size_t n = 1 + rng.index(15);
    for (std::size_t i = 0; i < n; ++i) {
      std::optional<std::string> parent;
      if (i > 0 && rng.bernoulli(0.6)) parent = "t" + std::to_string(rng.index(i));
      c.push_back(tweet("t" + std::to_string(i), kT0 + 1 + static_cast<std::int64_t>(i), parent));
    }
    auto net = build(record(c));
    // Convex hull, coordinate-wise.
    const auto agg = local_aggregate(net, 1 + static_cast<int>(rng.index(4)));
    for (std::size_t d = 0; d < kNodeFeatureCount; ++d) {
      double lo = 1e300, hi = -1e300;
      for (const auto& x : net.attributes) {
        lo = std::min(lo, x[d]);
        hi = std::max(hi, x[d]);
      }
      CHECK(agg[d] >= lo - 1e-9 * std::abs(lo));
      CHECK(agg[d] <= hi + 1e-9 * std::abs(hi));
    }
    // Constant attributes are a fixed point.
    NodeFeatureVector cst;
    cst.fill(2.5);
    for (auto& x : net.attributes) x = cst;
    for (double v : local_aggregate(net, 3)) CHECK(v == 2.5);
  }
}

TEST_CASE("hashed text features") {
  const auto empty = text_features_hashing("", 16, 1);
  for (double v : empty) CHECK(v == 0.0);
  const auto a = text_features_hashing("Alpha beta gamma", 16, 1);
  CHECK(a == text_features_hashing("Alpha beta gamma", 16, 1));
  CHECK(text_features_hashing("a b", 16, 1) == text_features_hashing("b a", 16, 1));
  double norm = 0;
  for (double v : a) norm += v * v;
  CHECK(norm == doctest::Approx(1.0));
  CHECK(a == text_features_hashing("alpha BETA gamma", 16, 1));
  CHECK_THROWS_AS(text_features_hashing("x", 1, 1), UsageError);

  const auto enc = TextEncoder::lookup({{"r1", {1.0, 2.0}}});
  CHECK(enc.dim() == 2);
  CHECK(enc.encode("r1", "ignored") == std::vector<double>{1.0, 2.0});
  CHECK_THROWS_WITH_AS(enc.encode("r9", ""), doctest::Contains("r9"), DataError);
}

TEST_CASE("standardizer") {
  const std::vector<std::vector<double>> rows{{1, 5}, {3, 5}};
  const auto s = Standardizer::fit(rows);
  CHECK(s.apply(rows[0]) == std::vector<double>{-1, 0});
  CHECK(s.apply(rows[1]) == std::vector<double>{1, 0});
  CHECK(s.stddev[1] == 1.0);
  CHECK_THROWS_AS(s.apply(std::vector<double>{1, 2, 3}), UsageError);

  Rng rng(3);
  std::vector<std::vector<double>> many(50, std::vector<double>(4));
  for (auto& r : many)
    for (double& v : r) v = rng.uniform(-10, 10);
  const auto s2 = Standardizer::fit(many);
  std::vector<double> col_mean(4, 0.0);
  for (const auto& r : many) {
    const auto z = s2.apply(r);
    for (std::size_t j = 0; j < 4; ++j) col_mean[j] += z[j] / 50;
  }
  for (double m : col_mean) CHECK(std::abs(m) < 1e-12);
}

TEST_CASE("input assembly") {
  const std::vector<double> t{1, 2, 3, 4}, n{5, 6, 7};
  const auto v = assemble_input(t, n);
  CHECK(v.size() == 7);
  CHECK(std::vector<double>(v.text().begin(), v.text().end()) == t);
  CHECK(std::vector<double>(v.network().begin(), v.network().end()) == n);
  const auto z = assemble_input(std::vector<double>(2, 0.0), std::vector<double>(3, 0.0));
  for (double x : z.values) CHECK(x == 0.0);
}

TEST_CASE("lexicon file format") {
  std::istringstream in("positive:\nnice\n\nnegative:\nawful\nworse\n");
  const auto lex = SentimentLexicon::parse(in);
  CHECK(lex.positive.contains("nice"));
  CHECK(lex.negative.size() == 2);
}

TEST_CASE("serial and parallel extraction are bit-identical") {
  SyntheticConfig cfg;
  cfg.domains.push_back({});
  cfg.domains.back().name = "x";
  cfg.domains.back().records = 60;
  const auto rs = generate_synthetic(cfg, 4);
  const auto views = make_views(rs);
  const auto text = TextEncoder::hashing(32, 1);
  const auto lex = SentimentLexicon::builtin();
  FeatureConfig fc;
  fc.edge_mode = EdgeMode::kParentsAndRules;
  const auto a = extract_features(views, fc, lex, text, Exec::kSerial);
  const auto b = extract_features(views, fc, lex, text, Exec::kParallel);
  CHECK(a.ids == b.ids);
  CHECK(a.network == b.network);
  CHECK(a.text == b.text);
}
