// Command-line front end of the pipeline. Exit status: 0 ok, 1 usage error,
// 2 data error.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fnd/error.hpp"
#include "fnd/pipeline.hpp"

namespace {

struct Overrides {
  std::vector<std::pair<std::string, std::string>> values;
};

// Per-stage overrides map one-to-one onto config keys.
void add_override(CLI::App* cmd, Overrides& ov, const std::string& flag, const std::string& key,
                  const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&ov, key](const std::string& v) { ov.values.emplace_back(key, v); }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain fake news detection pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::string> seed;
  std::optional<std::string> workdir;
  bool force = false;
  bool serial = false;
  std::vector<std::string> sets;
  Overrides ov;

  app.add_option("--config", config_path, "Pipeline config file (key = value)");
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--workdir", workdir, "Directory holding the stage artifacts");
  app.add_flag("--force", force, "Rerun even if the stage configuration changed");
  app.add_flag("--serial", serial, "Use the serial reference kernels");
  app.add_option("--set", sets, "Extra setting as key=value (repeatable)");

  for (const auto& name : fnd::stage_names()) {
    auto* cmd = app.add_subcommand(name);
    if (name == "synth") {
      add_override(cmd, ov, "--synthetic-config", "synthetic_config", "Generator config");
    } else if (name == "ingest") {
      add_override(cmd, ov, "--corpus", "corpus", "JSONL corpus");
      add_override(cmd, ov, "--train-fraction", "train_fraction", "Share of records in the pool");
    } else if (name == "features") {
      add_override(cmd, ov, "--delta-t", "delta_t", "Detection window in seconds");
      add_override(cmd, ov, "--text-dim", "text_dim", "Hashed text dimension");
      add_override(cmd, ov, "--text-mode", "text_mode", "hashing or lookup");
      add_override(cmd, ov, "--text-table", "text_table", "CSV of precomputed text embeddings");
      add_override(cmd, ov, "--edge-mode", "edge_mode", "parents or rules");
    } else if (name == "domains" || name == "embed") {
      add_override(cmd, ov, "--delta-t", "delta_t", "Detection window in seconds");
    } else if (name == "select") {
      add_override(cmd, ov, "--method", "method", "lsh, random or farthest");
      add_override(cmd, ov, "--budget", "budget", "Absolute labelling budget");
      add_override(cmd, ov, "--budget-frac", "budget_frac", "Budget as a share of the pool");
      add_override(cmd, ov, "--hash-count", "hash_count", "Projections per round");
    } else if (name == "coverage") {
      add_override(cmd, ov, "--budgets", "coverage_budgets", "Comma-separated budget shares");
      add_override(cmd, ov, "--methods", "coverage_methods", "Comma-separated methods");
      add_override(cmd, ov, "--runs", "coverage_seeds", "Seeds per (method, budget)");
    } else if (name == "train") {
      add_override(cmd, ov, "--epochs", "epochs", "Training epochs");
      add_override(cmd, ov, "--batch-size", "batch_size", "Mini-batch size");
      add_override(cmd, ov, "--latent-dim", "latent_dim", "Latent dimension d");
      add_override(cmd, ov, "--learning-rate", "learning_rate", "Adam learning rate");
      add_override(cmd, ov, "--lambda1", "lambda1", "Reconstruction weight");
      add_override(cmd, ov, "--lambda2", "lambda2", "Domain-specific weight");
      add_override(cmd, ov, "--lambda3", "lambda3", "Cross-domain weight");
    } else if (name == "grad-check") {
      add_override(cmd, ov, "--eps", "grad_eps", "Central-difference step");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    fnd::PipelineConfig cfg;
    if (!config_path.empty()) cfg = fnd::read_pipeline_config(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw fnd::UsageError("--set expects key=value, got " + s);
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) cfg.set("seed", *seed);
    if (workdir) cfg.set("workdir", *workdir);
    for (const auto& [k, v] : ov.values) cfg.set(k, v);

    fnd::StageOptions opts;
    opts.force = force;
    opts.exec = serial ? fnd::Exec::kSerial : fnd::Exec::kParallel;
    opts.log = &std::cerr;
    const std::string stage = app.get_subcommands().front()->get_name();
    fnd::run_stage(stage, cfg, opts);
    return 0;
  } catch (const fnd::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fnd::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
