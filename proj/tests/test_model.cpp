#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fnd/error.hpp"
#include "fnd/model.hpp"
#include "fnd/random.hpp"

using namespace fnd;

namespace {

Batch random_batch(const ModelDims& dims, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.x.resize(n, dims.input);
  for (double& v : b.x.flat()) v = rng.uniform(-2, 2);
  b.f_domain.resize(n, dims.domains);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (double& v : b.f_domain.row(r)) s += (v = rng.uniform());
    for (double& v : b.f_domain.row(r)) v /= s;
    b.y.push_back(static_cast<double>(rng.index(2)));
  }
  return b;
}

double max_rel(const std::vector<GradCheckGroup>& g) {
  double m = 0;
  for (const auto& x : g) m = std::max(m, x.max_rel_error);
  return m;
}

}  // namespace

TEST_CASE("hidden width rule") {
  CHECK(DenseBlock::hidden_for(512, 512) == 256);
  CHECK(DenseBlock::hidden_for(3, 1) == 2);
  CHECK(DenseBlock::hidden_for(1, 1) == 1);
  CHECK(DenseBlock::hidden_for(2 * 512, 1) == 512);
}

TEST_CASE("init_model shapes, zero biases, Glorot bounds, determinism") {
  const ModelDims dims{40, 512, 3};
  const auto m = init_model(dims, 7);
  CHECK(m.block(BlockId::kFSpecific).w1.rows() == 256);
  CHECK(m.block(BlockId::kFSpecific).w1.cols() == 40);
  CHECK(m.block(BlockId::kFSpecific).w2.rows() == 512);
  CHECK(m.block(BlockId::kGPred).w1.cols() == 1024);
  CHECK(m.block(BlockId::kGPred).w1.rows() == 512);
  CHECK(m.block(BlockId::kGPred).w2.rows() == 1);
  CHECK(m.block(BlockId::kGRecon).w2.rows() == 40);
  CHECK(m.block(BlockId::kGShared).w2.rows() == 3);
  for (const auto& b : m.blocks) {
    for (double v : b.b1) CHECK(v == 0.0);
    for (double v : b.b2) CHECK(v == 0.0);
    const double a1 = std::sqrt(6.0 / static_cast<double>(b.in_dim() + b.hidden_dim()));
    for (double v : b.w1.flat()) CHECK(std::abs(v) <= a1);
  }
  CHECK(init_model(dims, 7) == m);
  CHECK_FALSE(init_model(dims, 8) == m);
  CHECK_THROWS_AS(init_model({0, 4, 2}, 1), UsageError);
}

TEST_CASE("zero model outputs exactly one half") {
  const ModelDims dims{5, 3, 2};
  const auto m = zero_model(dims);
  const auto b = random_batch(dims, 4, 3);
  const auto out = forward(m, b.x);
  for (const Matrix* mat : {&out.y_hat, &out.x_hat, &out.d_spec, &out.d_shared, &out.z_spec,
                            &out.z_shared}) {
    for (double v : mat->flat()) CHECK(v == 0.5);
  }
  CHECK(predict_one(m, b.x.row(0)) == 0.5);
}

TEST_CASE("single block matches hand evaluation") {
  // 2 -> 2 -> 1 block evaluated directly.
  DenseBlock blk = DenseBlock::zeros(2, 1);
  REQUIRE(blk.hidden_dim() == 1);
  ModelDims dims{2, 1, 1};
  ModelParams m = zero_model(dims);
  auto& f = m.block(BlockId::kFSpecific);
  f.w1(0, 0) = 0.5;
  f.w1(0, 1) = -0.25;
  f.b1[0] = 0.1;
  f.w2(0, 0) = 2.0;
  f.b2[0] = -0.3;
  Matrix x(1, 2);
  x(0, 0) = 1.2;
  x(0, 1) = -0.4;
  const double h = 1.0 / (1.0 + std::exp(-(0.5 * 1.2 - 0.25 * -0.4 + 0.1)));
  const double z = 1.0 / (1.0 + std::exp(-(2.0 * h - 0.3)));
  const auto out = forward(m, x);
  CHECK(std::abs(out.z_spec(0, 0) - z) < 1e-12);
}

TEST_CASE("outputs stay in (0,1) and non-finite input is rejected") {
  const ModelDims dims{6, 4, 3};
  const auto m = init_model(dims, 11);
  auto b = random_batch(dims, 8, 5);
  for (double& v : b.x.flat()) v *= 50;
  const auto out = forward(m, b.x);
  for (double v : out.y_hat.flat()) CHECK((v > 0 && v < 1));
  b.x(2, 3) = std::nan("");
  CHECK_THROWS_AS(forward(m, b.x), DataError);
}

TEST_CASE("loss values") {
  const ModelDims dims{3, 2, 2};
  const auto m = zero_model(dims);
  Batch b = random_batch(dims, 1, 1);
  b.y = {1.0};
  const auto l = losses(forward(m, b.x), b, {});
  CHECK(std::abs(l.l_pred - std::log(2.0)) < 1e-12);

  Outputs o = forward(m, b.x);
  o.x_hat = reconstruction_target(b.x);
  CHECK(losses(o, b, {}).l_recon == 0.0);

  const LossWeights w{1, 10, 5};
  const auto l2 = losses(forward(init_model(dims, 2), b.x), b, w);
  CHECK(l2.l_final == l2.l_pred + 1 * l2.l_recon + 10 * l2.l_specific - 5 * l2.l_shared);
  CHECK(std::abs(LossBreakdown::combine(0.1, 0.2, 0.3, 0.4, w) - (0.1 + 0.2 + 3.0 - 2.0)) <
        1e-15);
}

TEST_CASE("BCE clamp bounds the prediction loss") {
  const ModelDims dims{2, 1, 1};
  ModelParams m = zero_model(dims);
  m.block(BlockId::kGPred).b2[0] = 100.0;  // y_hat -> 1
  Batch b = random_batch(dims, 1, 9);
  b.y = {0.0};
  const auto l = losses(forward(m, b.x), b, {});
  CHECK(std::isfinite(l.l_pred));
  CHECK(std::abs(l.l_pred + std::log(kBceClamp)) < 1e-6);
}

TEST_CASE("analytic gradients agree with central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ModelDims dims{4 + seed % 3, 3, 2 + seed % 2};
    const auto m = init_model(dims, seed);
    const auto b = random_batch(dims, 5, 100 + seed);
    const auto groups = grad_check(m, b, {1, 10, 5}, 1e-5);
    REQUIRE(groups.size() == kBlockCount);
    CHECK(max_rel(groups) < 1e-4);
    CHECK(groups[5].adversary);
  }
}

TEST_CASE("corrupted g_pred gradient is localised") {
  const ModelDims dims{4, 3, 2};
  const auto m = init_model(dims, 3);
  const auto b = random_batch(dims, 4, 4);
  const auto groups = grad_check(m, b, {1, 10, 5}, 1e-5, [](ModelGradients& g) {
    g[static_cast<std::size_t>(BlockId::kGPred)].w2(0, 0) += 0.05;
  });
  for (const auto& g : groups) {
    if (g.name == "g_pred") {
      CHECK(g.max_rel_error > 1e-2);
    } else {
      CHECK(g.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("central difference error shrinks with epsilon") {
  const ModelDims dims{4, 3, 2};
  const auto m = init_model(dims, 12);
  const auto b = random_batch(dims, 4, 13);
  double prev = 1e300;
  for (double eps : {1e-3, 1e-4, 1e-5}) {
    double abs_err = 0;
    for (const auto& g : grad_check(m, b, {1, 10, 5}, eps)) {
      abs_err = std::max(abs_err, g.max_abs_error);
    }
    CHECK(abs_err < prev);
    prev = abs_err;
  }
  CHECK_THROWS_AS(grad_check(m, b, {}, 1e-2), UsageError);
}

TEST_CASE("lambda_3 = 0 leaves the adversary untouched") {
  const ModelDims dims{4, 3, 2};
  ModelParams m = init_model(dims, 21);
  const auto before = m.block(BlockId::kGShared);
  auto opt = OptimizerState::create(m, {});
  const auto b = random_batch(dims, 6, 22);
  for (int i = 0; i < 3; ++i) train_step(m, opt, b, {1, 10, 0});
  CHECK(m.block(BlockId::kGShared) == before);
  CHECK_FALSE(m.block(BlockId::kFShared) == init_model(dims, 21).block(BlockId::kFShared));
}

TEST_CASE("adversary gradient signs") {
  const ModelDims dims{4, 3, 2};
  const auto m = init_model(dims, 31);
  const auto b = random_batch(dims, 6, 32);
  const auto k = static_cast<std::size_t>(BlockId::kGShared);
  const auto fs = static_cast<std::size_t>(BlockId::kFShared);

  // Gradient of L_shared alone, isolated by zeroing the other weights.
  const auto g_only_shared = final_loss_gradients(m, b, {0, 0, -1});
  const auto g_final = final_loss_gradients(m, b, {1, 10, 5});
  // d(-L_final)/d theta_2 = 5 dL_shared/d theta_2.
  for (std::size_t i = 0; i < g_final[k].w2.size(); ++i) {
    CHECK(std::abs(-g_final[k].w2.flat()[i] - 5 * g_only_shared[k].w2.flat()[i]) < 1e-12);
  }

  // The L_shared contribution to f_shared's gradient grows with lambda_3.
  const auto base = final_loss_gradients(m, b, {1, 10, 0});
  double prev = 0;
  for (double l3 : {1.0, 2.0, 5.0}) {
    const auto g = final_loss_gradients(m, b, {1, 10, l3});
    double norm = 0;
    for (std::size_t i = 0; i < g[fs].w1.size(); ++i) {
      const double d = g[fs].w1.flat()[i] - base[fs].w1.flat()[i];
      norm += d * d;
    }
    CHECK(norm > prev);
    prev = norm;
  }
}

TEST_CASE("one small step on the prediction loss descends") {
  const ModelDims dims{4, 3, 2};
  ModelParams m = init_model(dims, 41);
  const auto b = random_batch(dims, 1, 42);
  const LossWeights w{0, 0, 0};
  const double before = losses(forward(m, b.x), b, w).l_pred;
  auto opt = OptimizerState::create(m, {1e-4});
  train_step(m, opt, b, w);
  CHECK(losses(forward(m, b.x), b, w).l_pred < before);
}

TEST_CASE("serial and parallel training are bit-identical") {
  const ModelDims dims{30, 16, 3};
  TrainingSet t;
  const auto b = random_batch(dims, 70, 51);
  t.x = b.x;
  t.y = b.y;
  t.f_domain = b.f_domain;
  FitConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 5;
  auto m1 = init_model(dims, 1), m2 = m1;
  cfg.exec = Exec::kSerial;
  const auto h1 = fit(m1, t, cfg);
  cfg.exec = Exec::kParallel;
  const auto h2 = fit(m2, t, cfg);
  CHECK(m1 == m2);
  REQUIRE(h1.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) CHECK(h1.history[e].l_final == h2.history[e].l_final);
  CHECK(h1.steps == 15);
}

TEST_CASE("fit learns a separable problem") {
  const ModelDims dims{6, 4, 2};
  Rng rng(77);
  TrainingSet t;
  t.x.resize(200, 6);
  for (std::size_t r = 0; r < 200; ++r) {
    for (double& v : t.x.row(r)) v = rng.uniform(-1, 1);
    t.y.push_back(t.x(r, 0) + t.x(r, 1) > 0 ? 1.0 : 0.0);
  }
  t.f_domain = Matrix(200, 2, 0.5);
  ModelParams m = init_model(dims, 3);
  FitConfig cfg;
  cfg.epochs = 150;
  cfg.batch_size = 32;
  cfg.adam.learning_rate = 0.01;
  const auto res = fit(m, t, cfg);
  CHECK(res.history.size() == 150);
  CHECK(res.history.back().l_pred < res.history.front().l_pred);
  std::size_t correct = 0;
  const auto p = predict(m, t.x);
  for (std::size_t i = 0; i < 200; ++i) correct += (p[i] >= 0.5) == (t.y[i] == 1.0);
  CHECK(correct >= 190);
  CHECK_THROWS_AS(fit(m, TrainingSet{}, cfg), DataError);
}

TEST_CASE("metric formulas") {
  const auto m = BinaryMetrics::from_counts(1, 1, 1, 1);
  CHECK(m.accuracy == 0.5);
  CHECK(m.precision == 0.5);
  CHECK(m.recall == 0.5);
  CHECK(m.f1 == 0.5);
  const auto none = BinaryMetrics::from_counts(0, 0, 0, 5);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
  CHECK(none.accuracy == 1.0);
}

TEST_CASE("evaluate groups by domain tag") {
  const std::vector<double> p{0.9, 0.1, 0.8, 0.2, 0.7};
  const std::vector<int> y{1, 0, 1, 0, 1};
  const std::vector<std::string> tags{"a", "a", "b", "b", "b"};
  const auto r = evaluate_predictions(p, y, tags);
  CHECK(r.overall.f1 == 1.0);
  CHECK(r.per_domain.size() == 2);
  CHECK(r.per_domain.at("a").total() == 2);
  CHECK(r.per_domain.at("b").accuracy == 1.0);
  CHECK_THROWS_AS(evaluate_predictions({}, {}, {}), DataError);
}

TEST_CASE("nearest centroid probe") {
  Matrix train(4, 1), test(2, 1);
  train(0, 0) = 0;
  train(1, 0) = 0.2;
  train(2, 0) = 1;
  train(3, 0) = 1.2;
  test(0, 0) = 0.1;
  test(1, 0) = 0.9;
  const std::vector<std::string> tr{"x", "x", "y", "y"};
  CHECK(nearest_centroid_accuracy(train, tr, test, std::vector<std::string>{"x", "y"}) == 1.0);
  CHECK(nearest_centroid_accuracy(train, tr, test, std::vector<std::string>{"y", "y"}) == 0.5);
}

TEST_CASE("checkpoint round trip and partition guard") {
  const ModelDims dims{5, 3, 2};
  Checkpoint c;
  c.params = init_model(dims, 99);
  c.standardizer_mean = {3, 4, 5.5};
  c.standardizer_std = {0.25, 2, 1e-3};
  c.text_dim = 2;
  c.partition_fingerprint = "00ff00ff00ff00ff";
  const auto path = (std::filesystem::temp_directory_path() / "fnd_ckpt_test.json").string();
  save_checkpoint(path, c);
  const auto back = load_checkpoint(path);
  CHECK(back.params == c.params);
  CHECK(back.standardizer_std == c.standardizer_std);
  CHECK(back.partition_fingerprint == c.partition_fingerprint);
  CHECK_NOTHROW(check_partition(back, "00ff00ff00ff00ff", 2));
  CHECK_THROWS_AS(check_partition(back, "00ff00ff00ff00fe", 2), DataError);
  CHECK_THROWS_AS(check_partition(back, "00ff00ff00ff00ff", 3), DataError);
  std::filesystem::remove(path);
}
