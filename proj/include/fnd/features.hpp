#pragma once

// Propagation networks, node/global/local network features, text features
// and the standardised multimodal input vector.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fnd/ingest.hpp"
#include "fnd/parallel.hpp"

namespace fnd {

constexpr std::size_t kNodeFeatureCount = 14;
using NodeFeatureVector = std::array<double, kNodeFeatureCount>;

/// Word-list sentiment lexicon standing in for a learned sentiment model.
struct SentimentLexicon {
  std::unordered_set<std::string> positive;
  std::unordered_set<std::string> negative;

  static SentimentLexicon builtin();
  /// Format: "positive:" and "negative:" section lines, one word per line.
  static SentimentLexicon parse(std::istream& in);
  static SentimentLexicon load(const std::string& path);
};

enum class EdgeMode {
  kParents,          // explicit parent pointers only
  kParentsAndRules,  // parentless tweets get mention/time-window edges
};

/// Directed propagation network of one record. Node 0 is the synthetic source
/// node; node i >= 1 is tweets[i - 1].
struct PropagationNetwork {
  std::string record_id;
  std::int64_t published_at = 0;
  std::int64_t delta_t = 0;
  std::vector<CascadeNode> tweets;
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::vector<std::size_t>> in;
  std::vector<NodeFeatureVector> attributes;

  std::size_t node_count() const { return tweets.size() + 1; }
  std::int64_t timestamp(std::size_t node) const {
    return node == 0 ? published_at : tweets[node - 1].timestamp;
  }
  std::size_t edge_count() const;
};

PropagationNetwork build_propagation_graph(const RecordView& r, std::int64_t delta_t,
                                           const SentimentLexicon& lexicon,
                                           EdgeMode mode = EdgeMode::kParents);

/// n1..n14 for a tweet node (node >= 1). The source node's attributes are
/// all zero.
NodeFeatureVector node_features(std::size_t node, const PropagationNetwork& net,
                                const SentimentLexicon& lexicon);

struct GlobalFeatureVector {
  double wiener_index = 0;
  double node_count = 0;
  double depth = 0;
  std::vector<double> nodes_per_hop;        // hops 1..L
  std::vector<double> branching_per_level;  // levels 0..L-1
  double max_outdegree = 0;
  double propagation_speed = 0;  // tweets per hour

  std::vector<double> flatten() const;
};

/// Span floor, in hours, of the propagation-speed denominator (one minute).
constexpr double kMinSpanHours = 1.0 / 60.0;

GlobalFeatureVector global_features(const PropagationNetwork& net, std::size_t hop_levels);

/// Sum of undirected shortest-path lengths over unordered node pairs.
/// Pairs with no connecting path contribute nothing.
double wiener_index(const PropagationNetwork& net);

/// Iterated half-self / half-out-neighbour-mean smoothing; returns the
/// source node's vector after k rounds. Nodes without out-edges keep their
/// previous value.
NodeFeatureVector local_aggregate(const PropagationNetwork& net, int iterations);

std::vector<std::string> network_feature_names(std::size_t hop_levels);

// ---------------------------------------------------------------------------
// Text

/// Either signed feature hashing of title tokens or a precomputed
/// embedding table keyed by record id.
class TextEncoder {
 public:
  static TextEncoder hashing(std::size_t dim, std::uint64_t seed);
  static TextEncoder lookup(std::unordered_map<std::string, std::vector<double>> table);
  /// CSV with header; first column is the record id.
  static TextEncoder lookup_csv(const std::string& path);

  std::size_t dim() const { return dim_; }
  bool is_hashing() const { return table_ == nullptr; }
  std::vector<double> encode(const std::string& record_id, const std::string& title) const;

 private:
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::shared_ptr<const std::unordered_map<std::string, std::vector<double>>> table_;
};

std::vector<double> text_features_hashing(const std::string& title, std::size_t dim,
                                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Standardisation and assembly

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;  // population; 0 replaced by 1

  static Standardizer fit(std::span<const std::vector<double>> rows);
  std::vector<double> apply(std::span<const double> x) const;
  std::size_t dim() const { return mean.size(); }
};

/// f_text ⊕ f_network, text part first.
struct InputVector {
  std::vector<double> values;
  std::size_t text_dim = 0;

  std::span<const double> text() const { return {values.data(), text_dim}; }
  std::span<const double> network() const {
    return {values.data() + text_dim, values.size() - text_dim};
  }
  std::size_t size() const { return values.size(); }
};

InputVector assemble_input(std::span<const double> text, std::span<const double> network);

// ---------------------------------------------------------------------------
// Batch extraction

struct FeatureConfig {
  std::int64_t delta_t = 18000;  // five hours
  std::size_t hop_levels = 5;
  int aggregation_iters = 3;
  EdgeMode edge_mode = EdgeMode::kParents;
};

struct FeatureTable {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> text;     // d_t per row
  std::vector<std::vector<double>> network;  // raw, unstandardised
  std::vector<GlobalFeatureVector> global;
};

/// Per-record extraction. kParallel splits records across OpenMP threads;
/// results are identical to kSerial.
FeatureTable extract_features(std::span<const RecordView> records, const FeatureConfig& cfg,
                              const SentimentLexicon& lexicon, const TextEncoder& text,
                              Exec exec = Exec::kParallel);

}  // namespace fnd
