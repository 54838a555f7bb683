#pragma once

// End-to-end orchestration: configuration, in-memory experiment helpers and
// the resumable on-disk stages behind the command-line tool.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fnd/domain.hpp"
#include "fnd/error.hpp"
#include "fnd/features.hpp"
#include "fnd/ingest.hpp"
#include "fnd/model.hpp"
#include "fnd/select.hpp"

namespace fnd {

struct PipelineConfig {
  std::string workdir = "work";
  std::string corpus;            // JSONL; empty means <workdir>/corpus.jsonl
  std::string synthetic_config;  // generator config used by `synth`
  std::string lexicon;           // empty means the builtin word lists
  std::string text_mode = "hashing";  // hashing | lookup
  std::string text_table;        // CSV for lookup mode

  std::int64_t delta_t = 18000;
  std::size_t text_dim = 256;
  std::size_t hop_levels = 5;
  int aggregation_iters = 3;
  EdgeMode edge_mode = EdgeMode::kParents;
  double train_fraction = 0.75;

  std::size_t latent_dim = 512;
  LossWeights weights{1.0, 10.0, 5.0};
  int epochs = 300;
  std::size_t batch_size = 64;
  double learning_rate = 0.001;

  std::size_t hash_count = 10;
  std::string method = "lsh";    // lsh | random | farthest
  std::size_t budget = 0;        // absolute budget; 0 means use budget_frac
  double budget_frac = 0.1;

  std::vector<double> coverage_budgets{0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<std::string> coverage_methods{"lsh", "random"};
  int coverage_seeds = 20;

  double grad_eps = 1e-5;
  std::uint64_t seed = 2021;

  /// Applies one "key = value" setting; unknown keys are a UsageError.
  void set(const std::string& key, const std::string& value);
  /// Canonical "key=value" text of every setting, in a fixed order.
  std::map<std::string, std::string> settings() const;

  FeatureConfig feature_config() const;
  std::size_t budget_for(std::size_t pool_size) const;
};

PipelineConfig parse_pipeline_config(std::istream& in);
PipelineConfig read_pipeline_config(const std::string& path);

/// Fixed stream offsets of the per-stage seeds.
enum class SeedStream : std::uint64_t {
  kSynth = 1,
  kSplit = 2,
  kText = 3,
  kSelect = 4,
  kCoverage = 5,
  kInit = 6,
  kShuffle = 7,
  kGradCheck = 8,
};
std::uint64_t stage_seed(std::uint64_t master, SeedStream stream);

// ---------------------------------------------------------------------------
// In-memory experiment helpers (used by the stages and by the test suites)

TextEncoder make_text_encoder(const PipelineConfig& cfg);
SentimentLexicon make_lexicon(const PipelineConfig& cfg);

/// Everything downstream of a (pool, test) split that does not need labels.
struct PreparedCorpus {
  RecordSet pool, test;
  FeatureTable pool_features, test_features;
  Standardizer standardizer;  // fit on the pool's network features
  HeteroGraph graph;          // built from the pool only
  Partition partition;
  std::string fingerprint;
  DomainEmbedding pool_embedding, test_embedding;
};

PreparedCorpus prepare_corpus(RecordSet pool, RecordSet test, const PipelineConfig& cfg,
                              Exec exec = Exec::kParallel);

/// Standardised model inputs (text ⊕ standardised network) of the given rows.
Matrix input_matrix(const FeatureTable& features, const Standardizer& s);

/// Training examples for the given pool ids (labels are read here, and only
/// for these ids).
TrainingSet training_set_for(const PreparedCorpus& pc, const std::vector<std::string>& ids);

ModelDims model_dims(const PreparedCorpus& pc);
FitConfig fit_config(const PipelineConfig& cfg);

/// Labels and evaluation tags of a record set, in order.
std::vector<int> labels_of(const RecordSet& rs);
std::vector<std::string> domain_tags_of(const RecordSet& rs);

// ---------------------------------------------------------------------------
// Stages

const std::vector<std::string>& stage_names();

/// Missing upstream artifact; the message names the stage to run first.
class MissingArtifact : public DataError {
 public:
  using DataError::DataError;
};

struct StageOptions {
  bool force = false;
  Exec exec = Exec::kParallel;
  std::ostream* log = nullptr;  // progress messages
};

enum class StageOutcome { kRan, kUpToDate };

/// Runs one stage against cfg.workdir. Throws UsageError, DataError or
/// MissingArtifact.
StageOutcome run_stage(const std::string& stage, const PipelineConfig& cfg,
                       const StageOptions& opts);

/// FNV-1a of a file's bytes, as 16 hex digits.
std::string file_hash(const std::string& path);
std::string hex64(std::uint64_t v);

}  // namespace fnd
