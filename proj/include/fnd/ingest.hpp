#pragma once

// Corpus data model, JSONL record files, dataset splits and the synthetic
// multi-domain corpus generator.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fnd {

struct CascadeNode {
  std::string tweet_id;
  std::string user_id;
  std::int64_t timestamp = 0;
  std::optional<std::string> parent;
  bool is_public = true;
  std::vector<std::string> mentions;
  std::vector<std::string> hashtags;
  std::optional<std::string> text;
  bool user_verified = false;
  std::int64_t followers = 0;
  std::int64_t friends = 0;
  std::int64_t lists = 0;
  std::int64_t favourites = 0;
  std::int64_t user_created_at = 0;

  bool operator==(const CascadeNode&) const = default;
};

struct NewsRecord {
  std::string id;
  std::int64_t published_at = 0;
  std::string title;
  std::vector<CascadeNode> cascade;
  std::optional<int> label;  // 0 real, 1 fake
  std::optional<std::string> domain_tag;  // evaluation only

  bool operator==(const NewsRecord&) const = default;
};

struct RecordSet {
  std::vector<NewsRecord> records;
  std::string provenance;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

/// Read-only view of a record that hides the label and the domain tag.
/// Discovery and selection code only ever sees these.
class RecordView {
 public:
  explicit RecordView(const NewsRecord& r) : record_(&r) {}

  const std::string& id() const { return record_->id; }
  std::int64_t published_at() const { return record_->published_at; }
  const std::string& title() const { return record_->title; }
  std::span<const CascadeNode> cascade() const { return record_->cascade; }

 private:
  const NewsRecord* record_;
};

std::vector<RecordView> make_views(const RecordSet& rs);

/// Checks the record-level invariants; throws DataError.
void validate_record(const NewsRecord& r);

/// Parses one JSONL line. Throws DataError with "line N: ..." on failure.
NewsRecord parse_record_line(const std::string& line, std::size_t line_no);

/// Parses a JSONL stream; blank lines are skipped.
RecordSet parse_records(std::istream& in);
RecordSet read_records(const std::string& path);

std::string serialize_record(const NewsRecord& r);
void write_records(std::ostream& out, const RecordSet& rs);
void write_records(const std::string& path, const RecordSet& rs);

/// Uniform random split; |train| = round(train_fraction * |rs|).
std::pair<RecordSet, RecordSet> split_dataset(const RecordSet& rs,
                                              double train_fraction,
                                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic corpora

struct SyntheticDomain {
  std::string name;
  int records = 100;
  double fake_fraction = 0.5;
  int topic_words = 40;        // size of the domain's title vocabulary
  int marker_words = 6;        // domain-specific fake-marker vocabulary
  int users = 300;             // domain user pool
  int title_length = 8;
  double marker_rate_fake = 0.9;  // chance each marker slot is filled (fake)
  double marker_rate_real = 0.05;
  int markers_per_title = 2;
  double root_mean = 3.0;       // mean number of root tweets beyond the first
  double branching_real = 0.8;  // Galton-Watson offspring mean
  double branching_fake = 1.2;
  double interarrival_real = 1800.0;  // seconds
  double interarrival_fake = 600.0;
  double verified_rate = 0.1;
  double negative_rate_fake = 0.4;  // chance a tweet carries a negative word
  double negative_rate_real = 0.1;
  int max_cascade = 60;
};

struct SyntheticConfig {
  std::vector<SyntheticDomain> domains;
  int common_words = 30;        // vocabulary shared by every domain
  int common_per_title = 2;     // shared words per title
  int shared_users = 200;       // user pool shared by every domain
  double cross_user_rate = 0.05;  // chance a tweet comes from the shared pool
  std::int64_t start_time = 1600000000;
  std::string provenance = "synthetic";
};

/// Parses the flat "key = value" format; each "[domain]" line opens a new
/// domain section. '#' starts a comment.
SyntheticConfig parse_synthetic_config(std::istream& in);
SyntheticConfig read_synthetic_config(const std::string& path);

RecordSet generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

/// Deterministic topic/marker vocabulary of a domain, as used by the
/// generator. Exposed for tests.
std::vector<std::string> synthetic_topic_words(const SyntheticDomain& d);
std::vector<std::string> synthetic_marker_words(const SyntheticDomain& d);

/// Lowercased whitespace tokens.
std::vector<std::string> tokenize(const std::string& text);

}  // namespace fnd
