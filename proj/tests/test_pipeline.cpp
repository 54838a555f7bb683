#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fnd/csv.hpp"
#include "fnd/error.hpp"
#include "fnd/pipeline.hpp"

using namespace fnd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Fresh scratch directory holding a tiny two-domain generator config.
struct Scratch {
  fs::path root;

  explicit Scratch(const std::string& name) {
    root = fs::temp_directory_path() / ("fnd_test_" + name);
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "synth.conf") << "cross_user_rate = 0.2\n"
                                          "[domain]\nname = politics\nrecords = 40\n"
                                          "branching_real = 0.5\nbranching_fake = 0.9\n"
                                          "[domain]\nname = health\nrecords = 40\n"
                                          "branching_real = 1.0\nbranching_fake = 1.3\n";
  }
  ~Scratch() { fs::remove_all(root); }

  PipelineConfig config(const std::string& work) const {
    std::istringstream in("text_dim = 16\nlatent_dim = 6\nepochs = 3\nbatch_size = 16\n"
                          "coverage_budgets = 0.2, 0.4\ncoverage_seeds = 2\nbudget_frac = 0.5\n");
    auto cfg = parse_pipeline_config(in);
    cfg.workdir = (root / work).string();
    cfg.synthetic_config = (root / "synth.conf").string();
    return cfg;
  }
};

StageOptions quiet() { return {}; }

}  // namespace

TEST_CASE("pipeline config parsing") {
  std::istringstream in("# comment\nseed = 7\nmethod = random\nedge_mode = rules\n"
                        "coverage_budgets = 0.1,0.3\nlambda3 = 2.5\n");
  const auto cfg = parse_pipeline_config(in);
  CHECK(cfg.seed == 7);
  CHECK(cfg.method == "random");
  CHECK(cfg.edge_mode == EdgeMode::kParentsAndRules);
  CHECK(cfg.coverage_budgets == std::vector<double>{0.1, 0.3});
  CHECK(cfg.weights.shared == 2.5);
  CHECK(cfg.settings().at("seed") == "7");

  std::istringstream unknown("colour = red\n");
  CHECK_THROWS_WITH_AS(parse_pipeline_config(unknown), doctest::Contains("line 1"), UsageError);
  std::istringstream bad_method("method = magic\n");
  CHECK_THROWS_AS(parse_pipeline_config(bad_method), UsageError);
  std::istringstream section("[x]\nseed = 1\n");
  CHECK_THROWS_AS(parse_pipeline_config(section), UsageError);

  PipelineConfig d;
  CHECK(d.delta_t == 18000);
  CHECK(d.weights.recon == 1.0);
  CHECK(d.weights.specific == 10.0);
  CHECK(d.weights.shared == 5.0);
  CHECK(d.hash_count == 10);
  CHECK(d.budget_for(600) == 60);
  d.budget = 13;
  CHECK(d.budget_for(600) == 13);
  CHECK_THROWS_AS(d.set("budget_frac", "0"), UsageError);
}

TEST_CASE("stage seeds are distinct per stream") {
  std::set<std::uint64_t> seeds;
  for (auto s : {SeedStream::kSynth, SeedStream::kSplit, SeedStream::kText, SeedStream::kSelect,
                 SeedStream::kCoverage, SeedStream::kInit, SeedStream::kShuffle,
                 SeedStream::kGradCheck})
    seeds.insert(stage_seed(2021, s));
  CHECK(seeds.size() == 8);
  CHECK(stage_seed(2021, SeedStream::kInit) != stage_seed(2022, SeedStream::kInit));
}

TEST_CASE("full pipeline, resumability and determinism") {
  Scratch scratch("full");
  const auto cfg = scratch.config("a");
  const fs::path dir = cfg.workdir;

  // A downstream stage before its inputs exist names the missing stage.
  CHECK_THROWS_WITH_AS(run_stage("ingest", cfg, quiet()), doctest::Contains("run synth first"),
                       MissingArtifact);
  CHECK_THROWS_AS(run_stage("nonsense", cfg, quiet()), UsageError);

  for (const auto& s : stage_names()) {
    if (s == "train") {
      CHECK_THROWS_WITH_AS(run_stage("eval", cfg, quiet()), doctest::Contains("run train first"),
                           MissingArtifact);
    }
    CHECK(run_stage(s, cfg, quiet()) == StageOutcome::kRan);
  }
  for (const auto& s : stage_names()) CHECK(run_stage(s, cfg, quiet()) == StageOutcome::kUpToDate);

  const auto pool = read_csv((dir / "features_pool.csv").string());
  const auto selection = slurp(dir / "selection.txt");
  const auto lines = static_cast<std::size_t>(std::count(selection.begin(), selection.end(), '\n'));
  CHECK(lines == cfg.budget_for(pool.rows.size()));

  const auto metrics = read_csv((dir / "report_metrics.csv").string());
  std::vector<std::string> groups;
  for (const auto& r : metrics.rows) groups.push_back(r.at(0));
  CHECK(groups == std::vector<std::string>{"overall", "health", "politics"});
  CHECK(fs::exists(dir / "report_coverage.csv"));
  CHECK(read_csv((dir / "report_coverage.csv").string()).rows.size() == 4);
  CHECK(fs::exists(dir / "train.manifest.json"));

  // A second tree from the same seed, with the serial kernels, is byte-identical.
  const auto other = scratch.config("b");
  StageOptions serial;
  serial.exec = Exec::kSerial;
  for (const auto& s : stage_names()) run_stage(s, other, serial);
  for (const char* f : {"corpus.jsonl", "features_pool.csv", "partition.csv", "embeddings.csv",
                        "selection.txt", "coverage.csv", "history.csv", "metrics.csv",
                        "report.md", "ttest.csv"})
    CHECK_MESSAGE(slurp(dir / f) == slurp(fs::path(other.workdir) / f), f);

  // Changed settings are refused unless forced; downstream stages then rerun.
  auto changed = cfg;
  changed.set("epochs", "4");
  CHECK_THROWS_WITH_AS(run_stage("train", changed, quiet()), doctest::Contains("--force"),
                       DataError);
  StageOptions force;
  force.force = true;
  CHECK(run_stage("train", changed, force) == StageOutcome::kRan);
  CHECK(run_stage("eval", changed, quiet()) == StageOutcome::kRan);
  CHECK(run_stage("select", changed, quiet()) == StageOutcome::kUpToDate);
}

TEST_CASE("a different master seed changes the corpus") {
  Scratch scratch("seed");
  auto a = scratch.config("a");
  auto b = scratch.config("b");
  b.seed = a.seed + 1;
  run_stage("synth", a, quiet());
  run_stage("synth", b, quiet());
  CHECK(slurp(fs::path(a.workdir) / "corpus.jsonl") != slurp(fs::path(b.workdir) / "corpus.jsonl"));
}
