// Serial reference against the OpenMP path for the hot kernels. The second
// benchmark argument selects the path: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include "fnd/features.hpp"
#include "fnd/ingest.hpp"
#include "fnd/linalg.hpp"
#include "fnd/random.hpp"
#include "fnd/select.hpp"

using namespace fnd;

namespace {

Exec exec_of(const benchmark::State& state) {
  return state.range(1) == 0 ? Exec::kSerial : Exec::kParallel;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.flat()) v = rng.uniform(-1, 1);
  return m;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix c(n, n);
  for (auto _ : state) {
    kernels::matmul_nt(a, b, c, exec_of(state));
    benchmark::DoNotOptimize(c.flat().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Gemm)->ArgsProduct({{64, 256}, {0, 1}})->Unit(benchmark::kMicrosecond);

void BM_NearestNeighbour(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<std::vector<double>> pts(n, std::vector<double>(8));
  for (auto& p : pts)
    for (double& v : p) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(nearest_neighbor_distances(pts, exec_of(state)));
}
BENCHMARK(BM_NearestNeighbour)->ArgsProduct({{500, 2000}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_ExtractFeatures(benchmark::State& state) {
  SyntheticConfig cfg;
  for (const char* name : {"politics", "health"}) {
    SyntheticDomain d;
    d.name = name;
    d.records = static_cast<std::size_t>(state.range(0)) / 2;
    cfg.domains.push_back(d);
  }
  const auto rs = generate_synthetic(cfg, 4);
  const auto views = make_views(rs);
  const auto lexicon = SentimentLexicon::builtin();
  const auto text = TextEncoder::hashing(64, 5);
  for (auto _ : state)
    benchmark::DoNotOptimize(extract_features(views, FeatureConfig{}, lexicon, text, exec_of(state)));
}
BENCHMARK(BM_ExtractFeatures)->ArgsProduct({{400}, {0, 1}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
