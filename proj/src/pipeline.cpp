#include "fnd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "fnd/csv.hpp"
#include "fnd/kvconfig.hpp"
#include "fnd/random.hpp"
#include "fnd/stats.hpp"

namespace fs = std::filesystem;

namespace fnd {

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + f(xs[i]);
  return s;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw UsageError("setting " + key + ": expected a number, got '" + v + "'");
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos == v.size()) return i;
  } catch (const std::exception&) {
  }
  throw UsageError("setting " + key + ": expected an integer, got '" + v + "'");
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const auto i = to_int(key, v);
  if (i < 0) throw UsageError("setting " + key + " must be non-negative");
  return static_cast<std::size_t>(i);
}

void check_method(const std::string& m) {
  if (m != "lsh" && m != "random" && m != "farthest") {
    throw UsageError("unknown selection method '" + m + "' (lsh, random, farthest)");
  }
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "workdir") workdir = v;
  else if (key == "corpus") corpus = v;
  else if (key == "synthetic_config") synthetic_config = v;
  else if (key == "lexicon") lexicon = v;
  else if (key == "text_mode") {
    if (v != "hashing" && v != "lookup") throw UsageError("text_mode must be hashing or lookup");
    text_mode = v;
  } else if (key == "text_table") text_table = v;
  else if (key == "delta_t") {
    delta_t = to_int(key, v);
    if (delta_t <= 0) throw UsageError("delta_t must be positive");
  } else if (key == "text_dim") text_dim = to_count(key, v);
  else if (key == "hop_levels") hop_levels = to_count(key, v);
  else if (key == "aggregation_iters") aggregation_iters = static_cast<int>(to_count(key, v));
  else if (key == "edge_mode") {
    if (v == "parents") edge_mode = EdgeMode::kParents;
    else if (v == "rules") edge_mode = EdgeMode::kParentsAndRules;
    else throw UsageError("edge_mode must be parents or rules");
  } else if (key == "train_fraction") {
    train_fraction = to_double(key, v);
    if (train_fraction < 0 || train_fraction > 1) {
      throw UsageError("train_fraction must lie in [0, 1]");
    }
  } else if (key == "latent_dim") latent_dim = to_count(key, v);
  else if (key == "lambda1") weights.recon = to_double(key, v);
  else if (key == "lambda2") weights.specific = to_double(key, v);
  else if (key == "lambda3") weights.shared = to_double(key, v);
  else if (key == "epochs") epochs = static_cast<int>(to_count(key, v));
  else if (key == "batch_size") batch_size = to_count(key, v);
  else if (key == "learning_rate") learning_rate = to_double(key, v);
  else if (key == "hash_count") hash_count = to_count(key, v);
  else if (key == "method") {
    check_method(v);
    method = v;
  } else if (key == "budget") budget = to_count(key, v);
  else if (key == "budget_frac") {
    budget_frac = to_double(key, v);
    if (!(budget_frac > 0 && budget_frac <= 1)) throw UsageError("budget_frac must lie in (0, 1]");
  } else if (key == "coverage_budgets") {
    coverage_budgets.clear();
    for (const auto& s : split_list(v)) coverage_budgets.push_back(to_double(key, s));
  } else if (key == "coverage_methods") {
    coverage_methods = split_list(v);
    for (const auto& m : coverage_methods) check_method(m);
  } else if (key == "coverage_seeds") coverage_seeds = static_cast<int>(to_count(key, v));
  else if (key == "grad_eps") grad_eps = to_double(key, v);
  else if (key == "seed") seed = static_cast<std::uint64_t>(to_int(key, v));
  else throw UsageError("unknown setting '" + key + "'");
}

std::map<std::string, std::string> PipelineConfig::settings() const {
  std::map<std::string, std::string> s;
  s["workdir"] = workdir;
  s["corpus"] = corpus;
  s["synthetic_config"] = synthetic_config;
  s["lexicon"] = lexicon;
  s["text_mode"] = text_mode;
  s["text_table"] = text_table;
  s["delta_t"] = std::to_string(delta_t);
  s["text_dim"] = std::to_string(text_dim);
  s["hop_levels"] = std::to_string(hop_levels);
  s["aggregation_iters"] = std::to_string(aggregation_iters);
  s["edge_mode"] = edge_mode == EdgeMode::kParents ? "parents" : "rules";
  s["train_fraction"] = format_double(train_fraction);
  s["latent_dim"] = std::to_string(latent_dim);
  s["lambda1"] = format_double(weights.recon);
  s["lambda2"] = format_double(weights.specific);
  s["lambda3"] = format_double(weights.shared);
  s["epochs"] = std::to_string(epochs);
  s["batch_size"] = std::to_string(batch_size);
  s["learning_rate"] = format_double(learning_rate);
  s["hash_count"] = std::to_string(hash_count);
  s["method"] = method;
  s["budget"] = std::to_string(budget);
  s["budget_frac"] = format_double(budget_frac);
  s["coverage_budgets"] =
      join<double>(coverage_budgets, [](const double& d) { return format_double(d); });
  s["coverage_methods"] =
      join<std::string>(coverage_methods, [](const std::string& m) { return m; });
  s["coverage_seeds"] = std::to_string(coverage_seeds);
  s["grad_eps"] = format_double(grad_eps);
  s["seed"] = std::to_string(seed);
  return s;
}

FeatureConfig PipelineConfig::feature_config() const {
  FeatureConfig f;
  f.delta_t = delta_t;
  f.hop_levels = hop_levels;
  f.aggregation_iters = aggregation_iters;
  f.edge_mode = edge_mode;
  return f;
}

std::size_t PipelineConfig::budget_for(std::size_t pool_size) const {
  if (budget > 0) return budget;
  return static_cast<std::size_t>(std::llround(budget_frac * static_cast<double>(pool_size)));
}

PipelineConfig parse_pipeline_config(std::istream& in) {
  PipelineConfig cfg;
  for (const auto& section : parse_kv(in)) {
    if (!section.name.empty()) {
      throw UsageError("config line " + std::to_string(section.line) +
                       ": sections are not used in pipeline configs");
    }
    for (const auto& e : section.entries) {
      try {
        cfg.set(e.key, e.value);
      } catch (const UsageError& err) {
        throw UsageError("config line " + std::to_string(e.line) + ": " + err.what());
      }
    }
  }
  return cfg;
}

PipelineConfig read_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  return parse_pipeline_config(in);
}

std::uint64_t stage_seed(std::uint64_t master, SeedStream stream) {
  return derive_seed(master, static_cast<std::uint64_t>(stream));
}

// ---------------------------------------------------------------------------
// In-memory helpers

TextEncoder make_text_encoder(const PipelineConfig& cfg) {
  if (cfg.text_mode == "lookup") {
    if (cfg.text_table.empty()) throw UsageError("text_mode lookup needs text_table");
    return TextEncoder::lookup_csv(cfg.text_table);
  }
  return TextEncoder::hashing(cfg.text_dim, stage_seed(cfg.seed, SeedStream::kText));
}

SentimentLexicon make_lexicon(const PipelineConfig& cfg) {
  return cfg.lexicon.empty() ? SentimentLexicon::builtin() : SentimentLexicon::load(cfg.lexicon);
}

PreparedCorpus prepare_corpus(RecordSet pool, RecordSet test, const PipelineConfig& cfg,
                              Exec exec) {
  if (pool.empty()) throw DataError("training pool is empty");
  PreparedCorpus pc;
  pc.pool = std::move(pool);
  pc.test = std::move(test);
  const auto lex = make_lexicon(cfg);
  const auto text = make_text_encoder(cfg);
  const auto pool_views = make_views(pc.pool);
  const auto test_views = make_views(pc.test);
  pc.pool_features = extract_features(pool_views, cfg.feature_config(), lex, text, exec);
  pc.test_features = extract_features(test_views, cfg.feature_config(), lex, text, exec);
  pc.standardizer = Standardizer::fit(pc.pool_features.network);
  pc.graph = build_cooccurrence_graph(pool_views, cfg.delta_t, exec);
  pc.partition = louvain(pc.graph);
  pc.fingerprint = partition_fingerprint(pc.graph, pc.partition);
  pc.pool_embedding = domain_embed(pool_views, pc.graph, pc.partition, cfg.delta_t, exec);
  pc.test_embedding = domain_embed(test_views, pc.graph, pc.partition, cfg.delta_t, exec);
  return pc;
}

Matrix input_matrix(const FeatureTable& features, const Standardizer& s) {
  const std::size_t n = features.ids.size();
  if (n == 0) return {};
  const std::size_t dt = features.text.front().size();
  Matrix x(n, dt + s.dim());
  for (std::size_t i = 0; i < n; ++i) {
    const auto net = s.apply(features.network[i]);
    const auto v = assemble_input(features.text[i], net);
    std::copy(v.values.begin(), v.values.end(), x.row(i).begin());
  }
  return x;
}

namespace {

std::unordered_map<std::string, std::size_t> index_of(const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> m;
  for (std::size_t i = 0; i < ids.size(); ++i) m.emplace(ids[i], i);
  return m;
}

std::size_t lookup(const std::unordered_map<std::string, std::size_t>& m, const std::string& id,
                   const std::string& what) {
  auto it = m.find(id);
  if (it == m.end()) throw DataError("record " + id + " not found in " + what);
  return it->second;
}

/// Shared by the in-memory helper and the train stage.
TrainingSet assemble_training_set(const std::vector<std::string>& ids, const RecordSet& pool,
                                  const FeatureTable& features, const Standardizer& s,
                                  const DomainEmbedding& emb) {
  if (ids.empty()) throw DataError("no records selected for training");
  const auto rec_idx = [&] {
    std::unordered_map<std::string, std::size_t> m;
    for (std::size_t i = 0; i < pool.records.size(); ++i) m.emplace(pool.records[i].id, i);
    return m;
  }();
  const auto feat_idx = index_of(features.ids);
  const auto emb_idx = index_of(emb.ids);
  const std::size_t dt = features.text.front().size();
  TrainingSet t;
  t.x.resize(ids.size(), dt + s.dim());
  t.f_domain.resize(ids.size(), emb.dim());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto& rec = pool.records[lookup(rec_idx, ids[r], "the training pool")];
    if (!rec.label) throw DataError("record " + ids[r] + " selected for training has no label");
    t.y.push_back(static_cast<double>(*rec.label));
    const std::size_t f = lookup(feat_idx, ids[r], "the pool features");
    const auto v = assemble_input(features.text[f], s.apply(features.network[f]));
    std::copy(v.values.begin(), v.values.end(), t.x.row(r).begin());
    const auto& e = emb.rows[lookup(emb_idx, ids[r], "the domain embeddings")];
    std::copy(e.begin(), e.end(), t.f_domain.row(r).begin());
  }
  return t;
}

}  // namespace

TrainingSet training_set_for(const PreparedCorpus& pc, const std::vector<std::string>& ids) {
  return assemble_training_set(ids, pc.pool, pc.pool_features, pc.standardizer,
                               pc.pool_embedding);
}

ModelDims model_dims(const PreparedCorpus& pc) {
  return {pc.pool_features.text.front().size() + pc.standardizer.dim(), 0,
          pc.partition.count};
}

FitConfig fit_config(const PipelineConfig& cfg) {
  FitConfig f;
  f.epochs = cfg.epochs;
  f.batch_size = cfg.batch_size;
  f.weights = cfg.weights;
  f.adam.learning_rate = cfg.learning_rate;
  f.seed = stage_seed(cfg.seed, SeedStream::kShuffle);
  return f;
}

std::vector<int> labels_of(const RecordSet& rs) {
  std::vector<int> y;
  for (const auto& r : rs.records) {
    if (!r.label) throw DataError("record " + r.id + " has no label");
    y.push_back(*r.label);
  }
  return y;
}

std::vector<std::string> domain_tags_of(const RecordSet& rs) {
  std::vector<std::string> tags;
  for (const auto& r : rs.records) tags.push_back(r.domain_tag.value_or(""));
  return tags;
}

// ---------------------------------------------------------------------------
// Artifact I/O

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

namespace {

using json = nlohmann::ordered_json;

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

void write_feature_csv(const fs::path& p, const FeatureTable& t, std::size_t hop_levels) {
  auto out = open_out(p);
  CsvWriter w(out);
  std::vector<std::string> header{"id"};
  const std::size_t dt = t.text.empty() ? 0 : t.text.front().size();
  for (std::size_t i = 0; i < dt; ++i) header.push_back("text_" + std::to_string(i));
  for (const auto& n : network_feature_names(hop_levels)) header.push_back(n);
  w.row(header);
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    std::vector<std::string> row{t.ids[i]};
    for (double v : t.text[i]) row.push_back(format_double(v));
    for (double v : t.network[i]) row.push_back(format_double(v));
    w.row(row);
  }
}

FeatureTable read_feature_csv(const fs::path& p) {
  const auto csv = read_csv(p.string());
  std::size_t dt = 0;
  while (dt + 1 < csv.header.size() && csv.header[dt + 1].starts_with("text_")) ++dt;
  FeatureTable t;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row.size() != csv.header.size()) throw DataError(p.string() + ": ragged row");
    t.ids.push_back(row[0]);
    std::vector<double> text, net;
    for (std::size_t c = 1; c < row.size(); ++c) {
      (c <= dt ? text : net).push_back(csv_to_double(row[c], p.string(), r + 2));
    }
    t.text.push_back(std::move(text));
    t.network.push_back(std::move(net));
  }
  return t;
}

/// Column of a feature table by name, e.g. "depth".
std::vector<double> network_column(const FeatureTable& t, const fs::path& source,
                                   const std::string& name) {
  const auto csv = read_csv(source.string());
  const std::size_t col = csv.column(name);
  std::size_t dt = 0;
  while (dt + 1 < csv.header.size() && csv.header[dt + 1].starts_with("text_")) ++dt;
  std::vector<double> out;
  for (const auto& row : t.network) out.push_back(row.at(col - 1 - dt));
  return out;
}

void write_standardizer(const fs::path& p, const Standardizer& s, std::size_t hop_levels) {
  auto out = open_out(p);
  CsvWriter w(out);
  w.row({"feature", "mean", "stddev"});
  const auto names = network_feature_names(hop_levels);
  for (std::size_t i = 0; i < s.dim(); ++i) {
    w.row({names.at(i), format_double(s.mean[i]), format_double(s.stddev[i])});
  }
}

Standardizer read_standardizer(const fs::path& p) {
  const auto csv = read_csv(p.string());
  Standardizer s;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    s.mean.push_back(csv_to_double(csv.rows[r].at(1), p.string(), r + 2));
    s.stddev.push_back(csv_to_double(csv.rows[r].at(2), p.string(), r + 2));
  }
  return s;
}

void write_partition(const fs::path& p, const HeteroGraph& g, const Partition& part) {
  auto out = open_out(p);
  CsvWriter w(out);
  w.row({"node", "community", "degree"});
  for (std::size_t v = 0; v < g.node_count(); ++v) {
    w.row({g.nodes[v], std::to_string(part.community[v]), std::to_string(g.degree[v])});
  }
}

/// Node list, degrees and communities; enough for soft memberships.
std::pair<HeteroGraph, Partition> read_partition(const fs::path& p) {
  const auto csv = read_csv(p.string());
  HeteroGraph g;
  Partition part;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row.size() != 3) throw DataError(p.string() + ": ragged row");
    if (!g.nodes.empty() && !(g.nodes.back() < row[0])) {
      throw DataError(p.string() + ": nodes are not in ascending order");
    }
    g.nodes.push_back(row[0]);
    const auto c = static_cast<std::size_t>(csv_to_double(row[1], p.string(), r + 2));
    g.degree.push_back(static_cast<std::int64_t>(csv_to_double(row[2], p.string(), r + 2)));
    part.community.push_back(c);
    part.count = std::max(part.count, c + 1);
  }
  g.adj.assign(g.nodes.size(), {});
  g.total_weight = std::accumulate(g.degree.begin(), g.degree.end(), std::int64_t{0}) / 2;
  return {std::move(g), std::move(part)};
}

void write_embeddings(const fs::path& p, const DomainEmbedding& pool, const DomainEmbedding& test,
                      std::size_t dim) {
  auto out = open_out(p);
  CsvWriter w(out);
  std::vector<std::string> header{"id", "split"};
  for (std::size_t c = 0; c < dim; ++c) header.push_back("c" + std::to_string(c));
  w.row(header);
  const auto emit = [&](const DomainEmbedding& e, const char* split) {
    for (std::size_t i = 0; i < e.size(); ++i) {
      std::vector<std::string> row{e.ids[i], split};
      for (double v : e.rows[i]) row.push_back(format_double(v));
      w.row(row);
    }
  };
  emit(pool, "pool");
  emit(test, "test");
}

DomainEmbedding read_embeddings(const fs::path& p, const std::string& split) {
  const auto csv = read_csv(p.string());
  DomainEmbedding e;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row.size() != csv.header.size()) throw DataError(p.string() + ": ragged row");
    if (row[1] != split) continue;
    e.ids.push_back(row[0]);
    std::vector<double> v;
    for (std::size_t c = 2; c < row.size(); ++c) v.push_back(csv_to_double(row[c], p.string(), r + 2));
    e.rows.push_back(std::move(v));
  }
  return e;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Stage framework

struct Input {
  fs::path path;
  std::string producer;  // stage that writes it; empty for user files
  bool optional = false;
};

struct StagePlan {
  std::vector<Input> inputs;
  std::vector<fs::path> outputs;
  std::vector<std::string> keys;  // settings that affect the outputs
  std::uint64_t seed = 0;
  std::function<void()> body;
};

std::string config_hash(const PipelineConfig& cfg, const std::vector<std::string>& keys) {
  const auto s = cfg.settings();
  std::string canon;
  for (const auto& k : keys) canon += k + "=" + s.at(k) + "\n";
  return hex64(fnv1a64(canon));
}

StageOutcome execute(const std::string& stage, const PipelineConfig& cfg,
                     const StageOptions& opts, const fs::path& dir, StagePlan plan) {
  json input_hashes = json::object();
  for (const auto& in : plan.inputs) {
    if (!fs::exists(in.path)) {
      if (in.optional) continue;
      if (in.producer.empty()) throw DataError("input file " + in.path.string() + " not found");
      throw MissingArtifact("missing " + in.path.string() + ": run " + in.producer + " first");
    }
    input_hashes[in.path.filename().string()] = file_hash(in.path.string());
  }
  const std::string chash = config_hash(cfg, plan.keys);
  const fs::path manifest_path = dir / (stage + ".manifest.json");
  if (fs::exists(manifest_path) && !opts.force) {
    const json old = read_json(manifest_path);
    if (old.value("config_hash", "") != chash) {
      throw DataError("configuration of stage " + stage +
                      " changed since its last run; rerun with --force to overwrite");
    }
    const bool outputs_present = std::all_of(plan.outputs.begin(), plan.outputs.end(),
                                             [](const fs::path& p) { return fs::exists(p); });
    if (outputs_present && old.value("inputs", json::object()) == input_hashes &&
        old.value("seed", std::uint64_t{0}) == plan.seed) {
      if (opts.log) *opts.log << stage << ": up to date\n";
      return StageOutcome::kUpToDate;
    }
  }
  plan.body();
  json m;
  m["stage"] = stage;
  m["config_hash"] = chash;
  json settings = json::object();
  const auto s = cfg.settings();
  for (const auto& k : plan.keys) settings[k] = s.at(k);
  m["settings"] = settings;
  m["inputs"] = input_hashes;
  m["seed"] = plan.seed;
  json outputs = json::object();
  for (const auto& p : plan.outputs) outputs[p.filename().string()] = file_hash(p.string());
  m["outputs"] = outputs;
  auto out = open_out(manifest_path);
  out << m.dump(1) << '\n';
  if (opts.log) *opts.log << stage << ": done\n";
  return StageOutcome::kRan;
}

fs::path corpus_path(const PipelineConfig& cfg, const fs::path& dir) {
  return cfg.corpus.empty() ? dir / "corpus.jsonl" : fs::path(cfg.corpus);
}

// Stage bodies ---------------------------------------------------------------

StagePlan plan_synth(const PipelineConfig& cfg, const fs::path& dir) {
  if (cfg.synthetic_config.empty()) throw UsageError("synth needs synthetic_config to be set");
  StagePlan p;
  p.inputs = {{cfg.synthetic_config, ""}};
  p.outputs = {dir / "corpus.jsonl"};
  p.keys = {"synthetic_config", "seed"};
  p.seed = stage_seed(cfg.seed, SeedStream::kSynth);
  p.body = [=] {
    const auto sc = read_synthetic_config(cfg.synthetic_config);
    write_records((dir / "corpus.jsonl").string(), generate_synthetic(sc, p.seed));
  };
  return p;
}

StagePlan plan_ingest(const PipelineConfig& cfg, const fs::path& dir) {
  StagePlan p;
  const fs::path corpus = corpus_path(cfg, dir);
  p.inputs = {{corpus, cfg.corpus.empty() ? "synth" : ""}};
  p.outputs = {dir / "pool.jsonl", dir / "test.jsonl"};
  p.keys = {"corpus", "train_fraction", "seed"};
  p.seed = stage_seed(cfg.seed, SeedStream::kSplit);
  p.body = [=] {
    const auto rs = read_records(corpus.string());
    if (rs.empty()) throw DataError("corpus " + corpus.string() + " has no records");
    const auto [pool, test] = split_dataset(rs, cfg.train_fraction, p.seed);
    write_records((dir / "pool.jsonl").string(), pool);
    write_records((dir / "test.jsonl").string(), test);
  };
  return p;
}

StagePlan plan_features(const PipelineConfig& cfg, const fs::path& dir, Exec exec) {
  StagePlan p;
  p.inputs = {{dir / "pool.jsonl", "ingest"}, {dir / "test.jsonl", "ingest"}};
  if (!cfg.lexicon.empty()) p.inputs.push_back({cfg.lexicon, ""});
  if (cfg.text_mode == "lookup") p.inputs.push_back({cfg.text_table, ""});
  p.outputs = {dir / "features_pool.csv", dir / "features_test.csv", dir / "standardizer.csv"};
  p.keys = {"delta_t", "text_dim", "text_mode", "text_table", "lexicon", "hop_levels",
            "aggregation_iters", "edge_mode", "seed"};
  p.seed = stage_seed(cfg.seed, SeedStream::kText);
  p.body = [=] {
    const auto pool = read_records((dir / "pool.jsonl").string());
    const auto test = read_records((dir / "test.jsonl").string());
    if (pool.empty()) throw DataError("training pool is empty");
    const auto lex = make_lexicon(cfg);
    const auto text = make_text_encoder(cfg);
    const auto fp = extract_features(make_views(pool), cfg.feature_config(), lex, text, exec);
    const auto ft = extract_features(make_views(test), cfg.feature_config(), lex, text, exec);
    write_feature_csv(dir / "features_pool.csv", fp, cfg.hop_levels);
    write_feature_csv(dir / "features_test.csv", ft, cfg.hop_levels);
    write_standardizer(dir / "standardizer.csv", Standardizer::fit(fp.network), cfg.hop_levels);
  };
  return p;
}

StagePlan plan_domains(const PipelineConfig& cfg, const fs::path& dir, Exec exec) {
  StagePlan p;
  p.inputs = {{dir / "pool.jsonl", "ingest"}};
  p.outputs = {dir / "partition.csv", dir / "domains.json"};
  p.keys = {"delta_t"};
  p.body = [=] {
    const auto pool = read_records((dir / "pool.jsonl").string());
    const auto views = make_views(pool);
    const auto g = build_cooccurrence_graph(views, cfg.delta_t, exec);
    const auto res = louvain_detailed(g);
    write_partition(dir / "partition.csv", g, res.partition);
    json j;
    j["nodes"] = g.node_count();
    j["edges"] = g.edge_count();
    j["total_weight"] = g.total_weight;
    j["communities"] = res.partition.count;
    j["fingerprint"] = partition_fingerprint(g, res.partition);
    j["level_modularity"] = res.level_modularity;
    auto out = open_out(dir / "domains.json");
    out << j.dump(1) << '\n';
  };
  return p;
}

StagePlan plan_embed(const PipelineConfig& cfg, const fs::path& dir, Exec exec) {
  StagePlan p;
  p.inputs = {{dir / "pool.jsonl", "ingest"},
              {dir / "test.jsonl", "ingest"},
              {dir / "partition.csv", "domains"}};
  p.outputs = {dir / "embeddings.csv"};
  p.keys = {"delta_t"};
  p.body = [=] {
    const auto pool = read_records((dir / "pool.jsonl").string());
    const auto test = read_records((dir / "test.jsonl").string());
    const auto [g, part] = read_partition(dir / "partition.csv");
    if (part.count == 0) throw DataError("partition has no communities; is the pool empty?");
    const auto ep = domain_embed(make_views(pool), g, part, cfg.delta_t, exec);
    const auto et = domain_embed(make_views(test), g, part, cfg.delta_t, exec);
    write_embeddings(dir / "embeddings.csv", ep, et, part.count);
  };
  return p;
}

SelectionResult select_with(const std::string& method, const DomainEmbedding& emb,
                            std::size_t budget, std::size_t hash_count, std::uint64_t seed,
                            Exec exec) {
  if (budget == 0) throw UsageError("budget must be at least 1");
  if (method == "lsh") return lsh_select(emb, budget, hash_count, seed, exec);
  if (method == "random") return random_select(emb.ids, budget, seed);
  SelectionResult r;
  r.ids = farthest_point_oracle(emb, budget, seed);
  r.rounds = 1;
  r.round_stats.push_back({0, 1, budget});
  return r;
}

StagePlan plan_select(const PipelineConfig& cfg, const fs::path& dir, Exec exec) {
  StagePlan p;
  p.inputs = {{dir / "embeddings.csv", "embed"}};
  p.outputs = {dir / "selection.txt", dir / "selection_rounds.csv"};
  p.keys = {"method", "budget", "budget_frac", "hash_count", "seed"};
  p.seed = stage_seed(cfg.seed, SeedStream::kSelect);
  p.body = [=] {
    const auto emb = read_embeddings(dir / "embeddings.csv", "pool");
    const std::size_t b = cfg.budget_for(emb.size());
    const auto res = select_with(cfg.method, emb, b, cfg.hash_count, p.seed, exec);
    auto out = open_out(dir / "selection.txt");
    for (const auto& id : res.ids) out << id << '\n';
    auto rounds = open_out(dir / "selection_rounds.csv");
    CsvWriter w(rounds);
    w.row({"round", "bins", "picked"});
    for (const auto& s : res.round_stats) {
      w.row({std::to_string(s.round), std::to_string(s.bins), std::to_string(s.picked)});
    }
  };
  return p;
}

StagePlan plan_coverage(const PipelineConfig& cfg, const fs::path& dir, Exec exec) {
  StagePlan p;
  p.inputs = {{dir / "embeddings.csv", "embed"}};
  p.outputs = {dir / "coverage.csv", dir / "coverage_summary.csv"};
  p.keys = {"coverage_budgets", "coverage_methods", "coverage_seeds", "hash_count", "seed"};
  p.seed = stage_seed(cfg.seed, SeedStream::kCoverage);
  p.body = [=] {
    const auto emb = read_embeddings(dir / "embeddings.csv", "pool");
    auto out = open_out(dir / "coverage.csv");
    auto sum_out = open_out(dir / "coverage_summary.csv");
    CsvWriter w(out), ws(sum_out);
    w.row({"method", "budget_frac", "budget", "run", "lambda"});
    ws.row({"method", "budget_frac", "budget", "runs", "mean_lambda", "std_lambda"});
    for (const auto& method : cfg.coverage_methods) {
      for (double frac : cfg.coverage_budgets) {
        const auto b = static_cast<std::size_t>(std::llround(frac * static_cast<double>(emb.size())));
        if (b < 2) throw UsageError("coverage budget " + format_double(frac) + " selects fewer than 2 records");
        std::vector<double> lambdas;
        for (int s = 0; s < cfg.coverage_seeds; ++s) {
          const auto seed = derive_seed(p.seed, static_cast<std::uint64_t>(s));
          const auto res = select_with(method, emb, b, cfg.hash_count, seed, exec);
          const double lam = coverage_lambda(rows_for(emb, res.ids), exec);
          lambdas.push_back(lam);
          w.row({method, format_fixed(frac, 2), std::to_string(b), std::to_string(s),
                 format_fixed(lam, 6)});
        }
        ws.row({method, format_fixed(frac, 2), std::to_string(b), std::to_string(lambdas.size()),
                format_fixed(mean(lambdas), 6), format_fixed(population_stddev(lambdas), 6)});
      }
    }
  };
  return p;
}

StagePlan plan_train(const PipelineConfig& cfg, const fs::path& dir, Exec exec) {
  StagePlan p;
  p.inputs = {{dir / "pool.jsonl", "ingest"},        {dir / "features_pool.csv", "features"},
              {dir / "standardizer.csv", "features"}, {dir / "domains.json", "domains"},
              {dir / "embeddings.csv", "embed"},     {dir / "selection.txt", "select"}};
  p.outputs = {dir / "model.json", dir / "history.csv"};
  p.keys = {"latent_dim", "lambda1", "lambda2", "lambda3", "epochs", "batch_size",
            "learning_rate", "seed"};
  p.seed = stage_seed(cfg.seed, SeedStream::kInit);
  p.body = [=] {
    const auto pool = read_records((dir / "pool.jsonl").string());
    const auto features = read_feature_csv(dir / "features_pool.csv");
    const auto s = read_standardizer(dir / "standardizer.csv");
    const auto emb = read_embeddings(dir / "embeddings.csv", "pool");
    const auto ids = read_lines(dir / "selection.txt");
    const auto domains = read_json(dir / "domains.json");
    if (features.ids.empty()) throw DataError("pool features are empty");
    const auto train = assemble_training_set(ids, pool, features, s, emb);
    const ModelDims dims{train.x.cols(), cfg.latent_dim, emb.dim()};
    Checkpoint ckpt;
    ckpt.params = init_model(dims, p.seed);
    FitConfig fc = fit_config(cfg);
    fc.exec = exec;
    const auto res = fit(ckpt.params, train, fc);
    ckpt.standardizer_mean = s.mean;
    ckpt.standardizer_std = s.stddev;
    ckpt.text_dim = features.text.front().size();
    ckpt.partition_fingerprint = domains.at("fingerprint").get<std::string>();
    save_checkpoint((dir / "model.json").string(), ckpt);
    auto out = open_out(dir / "history.csv");
    CsvWriter w(out);
    w.row({"epoch", "l_pred", "l_recon", "l_specific", "l_shared", "l_final"});
    for (std::size_t e = 0; e < res.history.size(); ++e) {
      const auto& h = res.history[e];
      w.row({std::to_string(e + 1), format_double(h.l_pred), format_double(h.l_recon),
             format_double(h.l_specific), format_double(h.l_shared), format_double(h.l_final)});
    }
  };
  return p;
}

void write_metrics_row(CsvWriter& w, const std::string& group, const BinaryMetrics& m) {
  w.row({group, std::to_string(m.total()), format_fixed(m.accuracy, 6),
         format_fixed(m.precision, 6), format_fixed(m.recall, 6), format_fixed(m.f1, 6),
         std::to_string(m.tp), std::to_string(m.fp), std::to_string(m.fn), std::to_string(m.tn)});
}

StagePlan plan_eval(const PipelineConfig&, const fs::path& dir, Exec exec) {
  StagePlan p;
  p.inputs = {{dir / "model.json", "train"},          {dir / "test.jsonl", "ingest"},
              {dir / "features_test.csv", "features"}, {dir / "domains.json", "domains"},
              {dir / "embeddings.csv", "embed"},      {dir / "pool.jsonl", "ingest"},
              {dir / "features_pool.csv", "features"}, {dir / "selection.txt", "select"}};
  p.outputs = {dir / "metrics.csv", dir / "probe.csv"};
  p.body = [=] {
    const auto ckpt = load_checkpoint((dir / "model.json").string());
    const auto domains = read_json(dir / "domains.json");
    const auto emb = read_embeddings(dir / "embeddings.csv", "test");
    check_partition(ckpt, domains.at("fingerprint").get<std::string>(),
                    domains.at("communities").get<std::size_t>());
    const Standardizer s{ckpt.standardizer_mean, ckpt.standardizer_std};

    const auto test = read_records((dir / "test.jsonl").string());
    if (test.empty()) throw DataError("test set is empty");
    const auto ft = read_feature_csv(dir / "features_test.csv");
    if (ft.ids.size() != test.size()) throw DataError("test features do not match test.jsonl");
    const Matrix xt = input_matrix(ft, s);
    const auto report = evaluate(ckpt.params, xt, labels_of(test), domain_tags_of(test), exec);
    {
      auto out = open_out(dir / "metrics.csv");
      CsvWriter w(out);
      w.row({"group", "records", "accuracy", "precision", "recall", "f1", "tp", "fp", "fn", "tn"});
      write_metrics_row(w, "overall", report.overall);
      for (const auto& [tag, m] : report.per_domain) write_metrics_row(w, tag, m);
    }

    // Domain probe on the latents: centroids from the training selection.
    const auto pool = read_records((dir / "pool.jsonl").string());
    const auto fp = read_feature_csv(dir / "features_pool.csv");
    const auto ids = read_lines(dir / "selection.txt");
    const auto fidx = index_of(fp.ids);
    std::unordered_map<std::string, std::string> pool_tags;
    for (const auto& r : pool.records) pool_tags[r.id] = r.domain_tag.value_or("");
    FeatureTable sel;
    std::vector<std::string> sel_tags;
    for (const auto& id : ids) {
      const auto i = lookup(fidx, id, "the pool features");
      sel.ids.push_back(id);
      sel.text.push_back(fp.text[i]);
      sel.network.push_back(fp.network[i]);
      sel_tags.push_back(pool_tags.at(id));
    }
    const auto out_train = forward(ckpt.params, input_matrix(sel, s), exec);
    const auto out_test = forward(ckpt.params, xt, exec);
    const auto test_tags = domain_tags_of(test);
    auto out = open_out(dir / "probe.csv");
    CsvWriter w(out);
    w.row({"subspace", "probe_accuracy"});
    w.row({"specific", format_fixed(nearest_centroid_accuracy(out_train.z_spec, sel_tags,
                                                              out_test.z_spec, test_tags), 6)});
    w.row({"shared", format_fixed(nearest_centroid_accuracy(out_train.z_shared, sel_tags,
                                                            out_test.z_shared, test_tags), 6)});
  };
  return p;
}

StagePlan plan_ttest(const PipelineConfig& cfg, const fs::path& dir) {
  (void)cfg;
  StagePlan p;
  p.inputs = {{dir / "pool.jsonl", "ingest"},
              {dir / "test.jsonl", "ingest"},
              {dir / "features_pool.csv", "features"},
              {dir / "features_test.csv", "features"}};
  p.outputs = {dir / "ttest.csv"};
  p.body = [=] {
    std::map<std::string, std::map<std::string, std::vector<double>>> by_tag;
    for (const char* split : {"pool", "test"}) {
      const auto rs = read_records((dir / (std::string(split) + ".jsonl")).string());
      const fs::path fpath = dir / ("features_" + std::string(split) + ".csv");
      const auto ft = read_feature_csv(fpath);
      if (ft.ids.size() != rs.size()) throw DataError(fpath.string() + " does not match records");
      for (const char* feature : {"depth", "propagation_speed"}) {
        const auto col = network_column(ft, fpath, feature);
        for (std::size_t i = 0; i < rs.size(); ++i) {
          if (!rs.records[i].domain_tag) continue;
          by_tag[feature][*rs.records[i].domain_tag].push_back(col[i]);
        }
      }
    }
    auto out = open_out(dir / "ttest.csv");
    CsvWriter w(out);
    w.row({"feature", "domain_a", "domain_b", "n_a", "n_b", "mean_a", "mean_b", "t", "df", "p"});
    for (const auto& [feature, groups] : by_tag) {
      for (auto a = groups.begin(); a != groups.end(); ++a) {
        for (auto b = std::next(a); b != groups.end(); ++b) {
          if (a->second.size() < 2 || b->second.size() < 2) continue;
          const auto r = welch_t_test(a->second, b->second);
          w.row({feature, a->first, b->first, std::to_string(a->second.size()),
                 std::to_string(b->second.size()), format_fixed(mean(a->second), 6),
                 format_fixed(mean(b->second), 6), format_fixed(r.t, 6), format_fixed(r.df, 6),
                 format_double(r.p)});
        }
      }
    }
  };
  return p;
}

StagePlan plan_grad_check(const PipelineConfig& cfg, const fs::path& dir) {
  StagePlan p;
  p.outputs = {dir / "gradcheck.csv"};
  p.keys = {"grad_eps", "lambda1", "lambda2", "lambda3", "seed"};
  p.seed = stage_seed(cfg.seed, SeedStream::kGradCheck);
  p.body = [=] {
    // A tiny random model and batch: the check costs two forward passes per
    // parameter.
    const ModelDims dims{6, 4, 3};
    const auto m = init_model(dims, p.seed);
    Rng rng(derive_seed(p.seed, 1));
    Batch b;
    b.x.resize(8, dims.input);
    for (double& v : b.x.flat()) v = rng.uniform(-2, 2);
    b.f_domain.resize(8, dims.domains);
    for (std::size_t r = 0; r < 8; ++r) {
      double total = 0;
      for (double& v : b.f_domain.row(r)) total += (v = rng.uniform());
      for (double& v : b.f_domain.row(r)) v /= total;
      b.y.push_back(static_cast<double>(rng.index(2)));
    }
    const auto groups = grad_check(m, b, cfg.weights, cfg.grad_eps);
    auto out = open_out(dir / "gradcheck.csv");
    CsvWriter w(out);
    w.row({"group", "objective", "parameters", "max_rel_error", "max_abs_error"});
    for (const auto& g : groups) {
      w.row({g.name, g.adversary ? "-l_final" : "l_final", std::to_string(g.parameters),
             format_double(g.max_rel_error), format_double(g.max_abs_error)});
    }
  };
  return p;
}

std::string md_row(const std::vector<std::string>& cells) {
  std::string s = "|";
  for (const auto& c : cells) s += " " + c + " |";
  return s + "\n";
}

std::string md_table(const CsvTable& t) {
  std::string s = md_row(t.header);
  s += md_row(std::vector<std::string>(t.header.size(), "---"));
  for (const auto& r : t.rows) s += md_row(r);
  return s;
}

StagePlan plan_report(const PipelineConfig&, const fs::path& dir) {
  StagePlan p;
  p.inputs = {{dir / "metrics.csv", "eval"},
              {dir / "probe.csv", "eval", true},
              {dir / "coverage_summary.csv", "coverage", true},
              {dir / "history.csv", "train", true}};
  p.outputs = {dir / "report.md", dir / "report_metrics.csv"};
  p.body = [=] {
    const auto metrics = read_csv((dir / "metrics.csv").string());
    {
      auto out = open_out(dir / "report_metrics.csv");
      CsvWriter w(out);
      w.row({"group", "accuracy", "precision", "recall", "f1"});
      for (const auto& r : metrics.rows) {
        w.row({r.at(metrics.column("group")), r.at(metrics.column("accuracy")),
               r.at(metrics.column("precision")), r.at(metrics.column("recall")),
               r.at(metrics.column("f1"))});
      }
    }
    std::string md = "# Pipeline report\n\n## Classification (test split)\n\n";
    md += md_table(read_csv((dir / "report_metrics.csv").string()));
    if (fs::exists(dir / "probe.csv")) {
      md += "\n## Domain probe on latent subspaces\n\n" + md_table(read_csv((dir / "probe.csv").string()));
    }
    if (fs::exists(dir / "coverage_summary.csv")) {
      const auto cov = read_csv((dir / "coverage_summary.csv").string());
      auto out = open_out(dir / "report_coverage.csv");
      CsvWriter w(out);
      w.row({"method", "budget_frac", "mean_lambda"});
      for (const auto& r : cov.rows) {
        w.row({r.at(cov.column("method")), r.at(cov.column("budget_frac")),
               r.at(cov.column("mean_lambda"))});
      }
      out.close();
      md += "\n## Coverage lambda by method and budget\n\n" +
            md_table(read_csv((dir / "report_coverage.csv").string()));
    }
    if (fs::exists(dir / "history.csv")) {
      const auto h = read_csv((dir / "history.csv").string());
      CsvTable shown;
      shown.header = h.header;
      // First, last and every 50th epoch.
      for (std::size_t i = 0; i < h.rows.size(); ++i) {
        if (i == 0 || i + 1 == h.rows.size() || (i + 1) % 50 == 0) {
          std::vector<std::string> row{h.rows[i][0]};
          for (std::size_t c = 1; c < h.rows[i].size(); ++c) {
            row.push_back(format_fixed(csv_to_double(h.rows[i][c], "history.csv", i + 2), 6));
          }
          shown.rows.push_back(row);
        }
      }
      md += "\n## Training loss history\n\n" + md_table(shown);
    }
    auto out = open_out(dir / "report.md");
    out << md;
  };
  return p;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"synth", "ingest",   "features", "domains",
                                              "embed", "select",   "coverage", "train",
                                              "eval",  "ttest",    "grad-check", "report"};
  return names;
}

StageOutcome run_stage(const std::string& stage, const PipelineConfig& cfg,
                       const StageOptions& opts) {
  const fs::path dir = cfg.workdir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create workdir " + dir.string() + ": " + ec.message());
  StagePlan plan;
  if (stage == "synth") plan = plan_synth(cfg, dir);
  else if (stage == "ingest") plan = plan_ingest(cfg, dir);
  else if (stage == "features") plan = plan_features(cfg, dir, opts.exec);
  else if (stage == "domains") plan = plan_domains(cfg, dir, opts.exec);
  else if (stage == "embed") plan = plan_embed(cfg, dir, opts.exec);
  else if (stage == "select") plan = plan_select(cfg, dir, opts.exec);
  else if (stage == "coverage") plan = plan_coverage(cfg, dir, opts.exec);
  else if (stage == "train") plan = plan_train(cfg, dir, opts.exec);
  else if (stage == "eval") plan = plan_eval(cfg, dir, opts.exec);
  else if (stage == "ttest") plan = plan_ttest(cfg, dir);
  else if (stage == "grad-check") plan = plan_grad_check(cfg, dir);
  else if (stage == "report") plan = plan_report(cfg, dir);
  else throw UsageError("unknown stage '" + stage + "'");
  return execute(stage, cfg, opts, dir, std::move(plan));
}

}  // namespace fnd
