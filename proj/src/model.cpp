#include "fnd/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fnd/error.hpp"
#include "fnd/random.hpp"

namespace fnd {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::size_t DenseBlock::hidden_for(std::size_t in, std::size_t out) {
  return std::max<std::size_t>(1, (std::max(in, out) + 1) / 2);
}

DenseBlock DenseBlock::zeros(std::size_t in, std::size_t out) {
  const std::size_t h = hidden_for(in, out);
  return {Matrix(h, in), std::vector<double>(h, 0.0), Matrix(out, h),
          std::vector<double>(out, 0.0)};
}

DenseBlock DenseBlock::glorot(std::size_t in, std::size_t out, std::uint64_t seed) {
  DenseBlock b = zeros(in, out);
  Rng rng(seed);
  const double a1 = std::sqrt(6.0 / static_cast<double>(in + b.hidden_dim()));
  for (double& w : b.w1.flat()) w = rng.uniform(-a1, a1);
  const double a2 = std::sqrt(6.0 / static_cast<double>(b.hidden_dim() + out));
  for (double& w : b.w2.flat()) w = rng.uniform(-a2, a2);
  return b;
}

const char* block_name(BlockId id) {
  switch (id) {
    case BlockId::kFSpecific: return "f_specific";
    case BlockId::kFShared: return "f_shared";
    case BlockId::kGPred: return "g_pred";
    case BlockId::kGRecon: return "g_recon";
    case BlockId::kGSpecific: return "g_specific";
    case BlockId::kGShared: return "g_shared";
  }
  return "?";
}

namespace {

struct Shape {
  std::size_t in, out;
};

std::array<Shape, kBlockCount> block_shapes(const ModelDims& d) {
  return {{{d.input, d.latent},
           {d.input, d.latent},
           {2 * d.latent, 1},
           {2 * d.latent, d.input},
           {d.latent, d.domains},
           {d.latent, d.domains}}};
}

void check_dims(const ModelDims& d) {
  if (d.input == 0 || d.latent == 0 || d.domains == 0) {
    throw UsageError("model dimensions must all be at least 1");
  }
}

}  // namespace

ModelParams init_model(const ModelDims& dims, std::uint64_t seed) {
  check_dims(dims);
  ModelParams m;
  m.dims = dims;
  m.seed = seed;
  const auto shapes = block_shapes(dims);
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    m.blocks[i] = DenseBlock::glorot(shapes[i].in, shapes[i].out, derive_seed(seed, 0xb10c + i));
  }
  return m;
}

ModelParams zero_model(const ModelDims& dims) {
  check_dims(dims);
  ModelParams m;
  m.dims = dims;
  const auto shapes = block_shapes(dims);
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    m.blocks[i] = DenseBlock::zeros(shapes[i].in, shapes[i].out);
  }
  return m;
}

double LossBreakdown::combine(double pred, double recon, double specific, double shared,
                              const LossWeights& w) {
  return pred + w.recon * recon + w.specific * specific - w.shared * shared;
}

// ---------------------------------------------------------------------------
// Forward / backward through one block

namespace {

struct BlockCache {
  Matrix h;  // batch x hidden
  Matrix z;  // batch x out
};

void add_bias_sigmoid(Matrix& a, const std::vector<double>& b) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = sigmoid(row[c] + b[c]);
  }
}

BlockCache block_forward(const DenseBlock& b, const Matrix& x, Exec exec) {
  BlockCache cache;
  kernels::matmul_nt(x, b.w1, cache.h, exec);
  add_bias_sigmoid(cache.h, b.b1);
  kernels::matmul_nt(cache.h, b.w2, cache.z, exec);
  add_bias_sigmoid(cache.z, b.b2);
  return cache;
}

std::vector<double> column_sums(const Matrix& a) {
  std::vector<double> s(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) s[c] += row[c];
  }
  return s;
}

/// Given dL/dz, fills the block gradient and returns dL/dx (if wanted).
Matrix block_backward(const DenseBlock& b, const Matrix& x, const BlockCache& cache,
                      Matrix dz, BlockGrad& g, bool want_dx, Exec exec) {
  for (std::size_t i = 0; i < dz.size(); ++i) {
    const double z = cache.z.flat()[i];
    dz.flat()[i] *= z * (1.0 - z);
  }
  kernels::matmul_tn(dz, cache.h, g.w2, exec);
  g.b2 = column_sums(dz);
  Matrix dh;
  kernels::matmul_nn(dz, b.w2, dh, exec);
  for (std::size_t i = 0; i < dh.size(); ++i) {
    const double h = cache.h.flat()[i];
    dh.flat()[i] *= h * (1.0 - h);
  }
  kernels::matmul_tn(dh, x, g.w1, exec);
  g.b1 = column_sums(dh);
  Matrix dx;
  if (want_dx) kernels::matmul_nn(dh, b.w1, dx, exec);
  return dx;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto o = out.row(r);
    std::copy(a.row(r).begin(), a.row(r).end(), o.begin());
    std::copy(b.row(r).begin(), b.row(r).end(), o.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

struct ForwardCache {
  Matrix latent;  // z_spec ++ z_shared
  std::array<BlockCache, kBlockCount> blocks;
  BlockCache& at(BlockId id) { return blocks[static_cast<std::size_t>(id)]; }
  const BlockCache& at(BlockId id) const { return blocks[static_cast<std::size_t>(id)]; }
};

void check_finite_input(const Matrix& x, std::size_t expected_cols) {
  if (x.cols() != expected_cols) {
    throw UsageError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(expected_cols));
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (double v : x.row(r)) {
      if (!std::isfinite(v)) {
        throw DataError("non-finite input value in row " + std::to_string(r));
      }
    }
  }
}

ForwardCache forward_cached(const ModelParams& m, const Matrix& x, Exec exec) {
  check_finite_input(x, m.dims.input);
  ForwardCache fc;
  fc.at(BlockId::kFSpecific) = block_forward(m.block(BlockId::kFSpecific), x, exec);
  fc.at(BlockId::kFShared) = block_forward(m.block(BlockId::kFShared), x, exec);
  fc.latent = concat_cols(fc.at(BlockId::kFSpecific).z, fc.at(BlockId::kFShared).z);
  fc.at(BlockId::kGPred) = block_forward(m.block(BlockId::kGPred), fc.latent, exec);
  fc.at(BlockId::kGRecon) = block_forward(m.block(BlockId::kGRecon), fc.latent, exec);
  fc.at(BlockId::kGSpecific) =
      block_forward(m.block(BlockId::kGSpecific), fc.at(BlockId::kFSpecific).z, exec);
  fc.at(BlockId::kGShared) =
      block_forward(m.block(BlockId::kGShared), fc.at(BlockId::kFShared).z, exec);
  return fc;
}

Outputs outputs_of(ForwardCache fc) {
  Outputs o;
  o.z_spec = std::move(fc.at(BlockId::kFSpecific).z);
  o.z_shared = std::move(fc.at(BlockId::kFShared).z);
  o.y_hat = std::move(fc.at(BlockId::kGPred).z);
  o.x_hat = std::move(fc.at(BlockId::kGRecon).z);
  o.d_spec = std::move(fc.at(BlockId::kGSpecific).z);
  o.d_shared = std::move(fc.at(BlockId::kGShared).z);
  return o;
}

void check_batch(const ModelParams& m, const Batch& batch) {
  const std::size_t n = batch.size();
  if (n == 0) throw UsageError("batch is empty");
  if (batch.y.size() != n || batch.f_domain.rows() != n) {
    throw UsageError("batch components disagree on the number of examples");
  }
  if (batch.f_domain.cols() != m.dims.domains) {
    throw UsageError("domain embedding has " + std::to_string(batch.f_domain.cols()) +
                     " columns, model expects " + std::to_string(m.dims.domains));
  }
}

double clamp_pred(double p) { return std::clamp(p, kBceClamp, 1.0 - kBceClamp); }

double mean_sq_diff(const Matrix& a, const Matrix& b) {
  double total = 0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto ar = a.row(r), br = b.row(r);
    double s = 0;
    for (std::size_t c = 0; c < ar.size(); ++c) s += (ar[c] - br[c]) * (ar[c] - br[c]);
    total += s / static_cast<double>(ar.size());
  }
  return total / static_cast<double>(a.rows());
}

/// d/dpred of the batch-mean squared error term, scaled by `weight`.
Matrix sq_diff_grad(const Matrix& pred, const Matrix& target, double weight) {
  Matrix g(pred.rows(), pred.cols());
  const double scale = 2.0 * weight / static_cast<double>(pred.cols() * pred.rows());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    g.flat()[i] = scale * (pred.flat()[i] - target.flat()[i]);
  }
  return g;
}

LossBreakdown losses_from(const Matrix& y_hat, const Matrix& x_hat, const Matrix& d_spec,
                          const Matrix& d_shared, const Batch& batch, const Matrix& target,
                          const LossWeights& w) {
  LossBreakdown l;
  l.weights = w;
  double bce = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double p = clamp_pred(y_hat(i, 0));
    const double y = batch.y[i];
    bce += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  l.l_pred = bce / static_cast<double>(batch.size());
  l.l_recon = mean_sq_diff(x_hat, target);
  l.l_specific = mean_sq_diff(d_spec, batch.f_domain);
  l.l_shared = mean_sq_diff(d_shared, batch.f_domain);
  l.l_final = LossBreakdown::combine(l.l_pred, l.l_recon, l.l_specific, l.l_shared, w);
  return l;
}

void check_finite_grad(const BlockGrad& g, BlockId id) {
  auto bad = [](std::span<const double> v) {
    return std::any_of(v.begin(), v.end(), [](double x) { return !std::isfinite(x); });
  };
  if (bad(g.w1.flat()) || bad(g.b1) || bad(g.w2.flat()) || bad(g.b2)) {
    throw DataError(std::string("non-finite gradient in block ") + block_name(id));
  }
}

}  // namespace

Outputs forward(const ModelParams& m, const Matrix& x, Exec exec) {
  return outputs_of(forward_cached(m, x, exec));
}

Matrix reconstruction_target(const Matrix& x) {
  Matrix t(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) t.flat()[i] = sigmoid(x.flat()[i]);
  return t;
}

LossBreakdown losses(const Outputs& out, const Batch& batch, const LossWeights& w) {
  return losses_from(out.y_hat, out.x_hat, out.d_spec, out.d_shared, batch,
                     reconstruction_target(batch.x), w);
}

ModelGradients final_loss_gradients(const ModelParams& m, const Batch& batch,
                                    const LossWeights& w, LossBreakdown* loss, Exec exec) {
  check_batch(m, batch);
  const ForwardCache fc = forward_cached(m, batch.x, exec);
  const Matrix target = reconstruction_target(batch.x);
  const auto& y_hat = fc.at(BlockId::kGPred).z;
  const auto& x_hat = fc.at(BlockId::kGRecon).z;
  const auto& d_spec = fc.at(BlockId::kGSpecific).z;
  const auto& d_shared = fc.at(BlockId::kGShared).z;
  if (loss) *loss = losses_from(y_hat, x_hat, d_spec, d_shared, batch, target, w);

  const std::size_t n = batch.size();
  const std::size_t d = m.dims.latent;
  ModelGradients g;
  auto grad = [&](BlockId id) -> BlockGrad& { return g[static_cast<std::size_t>(id)]; };

  // Prediction head: derivative is zero where the clamp is active.
  Matrix dy(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = y_hat(i, 0);
    if (p < kBceClamp || p > 1.0 - kBceClamp) continue;
    dy(i, 0) = (p - batch.y[i]) / (p * (1.0 - p)) / static_cast<double>(n);
  }
  Matrix d_latent = block_backward(m.block(BlockId::kGPred), fc.latent, fc.at(BlockId::kGPred),
                                   std::move(dy), grad(BlockId::kGPred), true, exec);
  const Matrix d_latent_recon =
      block_backward(m.block(BlockId::kGRecon), fc.latent, fc.at(BlockId::kGRecon),
                     sq_diff_grad(x_hat, target, w.recon), grad(BlockId::kGRecon), true, exec);
  for (std::size_t i = 0; i < d_latent.size(); ++i) d_latent.flat()[i] += d_latent_recon.flat()[i];

  const auto& z_spec = fc.at(BlockId::kFSpecific).z;
  const auto& z_shared = fc.at(BlockId::kFShared).z;
  Matrix dz_spec =
      block_backward(m.block(BlockId::kGSpecific), z_spec, fc.at(BlockId::kGSpecific),
                     sq_diff_grad(d_spec, batch.f_domain, w.specific),
                     grad(BlockId::kGSpecific), true, exec);
  Matrix dz_shared =
      block_backward(m.block(BlockId::kGShared), z_shared, fc.at(BlockId::kGShared),
                     sq_diff_grad(d_shared, batch.f_domain, -w.shared),
                     grad(BlockId::kGShared), true, exec);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      dz_spec(r, c) += d_latent(r, c);
      dz_shared(r, c) += d_latent(r, d + c);
    }
  }
  block_backward(m.block(BlockId::kFSpecific), batch.x, fc.at(BlockId::kFSpecific),
                 std::move(dz_spec), grad(BlockId::kFSpecific), false, exec);
  block_backward(m.block(BlockId::kFShared), batch.x, fc.at(BlockId::kFShared),
                 std::move(dz_shared), grad(BlockId::kFShared), false, exec);
  return g;
}

// ---------------------------------------------------------------------------
// Adam

namespace {

BlockGrad zeros_like(const DenseBlock& b) {
  return {Matrix(b.w1.rows(), b.w1.cols()), std::vector<double>(b.b1.size(), 0.0),
          Matrix(b.w2.rows(), b.w2.cols()), std::vector<double>(b.b2.size(), 0.0)};
}

void adam_tensor(std::span<double> theta, std::span<const double> g, std::span<double> m,
                 std::span<double> v, const AdamConfig& c, std::int64_t step) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    theta[i] -= c.learning_rate * mh / (std::sqrt(vh) + c.epsilon);
  }
}

void adam_block(DenseBlock& b, const BlockGrad& g, AdamMoments& mo, const AdamConfig& c,
                std::int64_t step) {
  adam_tensor(b.w1.flat(), g.w1.flat(), mo.m.w1.flat(), mo.v.w1.flat(), c, step);
  adam_tensor(b.b1, g.b1, mo.m.b1, mo.v.b1, c, step);
  adam_tensor(b.w2.flat(), g.w2.flat(), mo.m.w2.flat(), mo.v.w2.flat(), c, step);
  adam_tensor(b.b2, g.b2, mo.m.b2, mo.v.b2, c, step);
}

/// Gradient of lambda_3 * L_shared with respect to the adversary only.
BlockGrad adversary_gradient(const ModelParams& m, const Batch& batch, const LossWeights& w,
                             Exec exec) {
  const auto& fs = m.block(BlockId::kFShared);
  const auto& gs = m.block(BlockId::kGShared);
  check_finite_input(batch.x, m.dims.input);
  const BlockCache enc = block_forward(fs, batch.x, exec);
  const BlockCache dec = block_forward(gs, enc.z, exec);
  BlockGrad g;
  block_backward(gs, enc.z, dec, sq_diff_grad(dec.z, batch.f_domain, w.shared), g, false, exec);
  return g;
}

}  // namespace

OptimizerState OptimizerState::create(const ModelParams& m, const AdamConfig& config) {
  OptimizerState s;
  s.config = config;
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    s.moments[i].m = zeros_like(m.blocks[i]);
    s.moments[i].v = zeros_like(m.blocks[i]);
  }
  return s;
}

LossBreakdown train_step(ModelParams& m, OptimizerState& opt, const Batch& batch,
                         const LossWeights& w, Exec exec) {
  LossBreakdown loss;
  const ModelGradients g = final_loss_gradients(m, batch, w, &loss, exec);
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    if (!is_adversary(static_cast<BlockId>(i))) check_finite_grad(g[i], static_cast<BlockId>(i));
  }
  ++opt.main_steps;
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    if (is_adversary(static_cast<BlockId>(i))) continue;
    adam_block(m.blocks[i], g[i], opt.moments[i], opt.config, opt.main_steps);
  }

  const BlockGrad ga = adversary_gradient(m, batch, w, exec);
  check_finite_grad(ga, BlockId::kGShared);
  ++opt.adversary_steps;
  const auto k = static_cast<std::size_t>(BlockId::kGShared);
  adam_block(m.blocks[k], ga, opt.moments[k], opt.config, opt.adversary_steps);
  return loss;
}

namespace {

Batch gather(const TrainingSet& t, std::span<const std::size_t> idx) {
  Batch b;
  b.x.resize(idx.size(), t.x.cols());
  b.f_domain.resize(idx.size(), t.f_domain.cols());
  b.y.resize(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy(t.x.row(idx[r]).begin(), t.x.row(idx[r]).end(), b.x.row(r).begin());
    std::copy(t.f_domain.row(idx[r]).begin(), t.f_domain.row(idx[r]).end(),
              b.f_domain.row(r).begin());
    b.y[r] = t.y[idx[r]];
  }
  return b;
}

}  // namespace

FitResult fit(ModelParams& m, const TrainingSet& train, const FitConfig& cfg,
              const std::function<void(const LossBreakdown&)>& on_step) {
  const std::size_t n = train.size();
  if (n == 0) throw DataError("training set is empty");
  if (train.y.size() != n || train.f_domain.rows() != n) {
    throw UsageError("training set components disagree on the number of examples");
  }
  for (double y : train.y) {
    if (y != 0.0 && y != 1.0) throw DataError("training labels must be 0 or 1");
  }
  if (cfg.epochs < 1) throw UsageError("epochs must be at least 1");
  if (cfg.batch_size == 0) throw UsageError("batch size must be at least 1");

  OptimizerState opt = OptimizerState::create(m, cfg.adam);
  Rng rng(derive_seed(cfg.seed, 0xf17));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  FitResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double pred = 0, recon = 0, spec = 0, shared = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      const Batch batch = gather(train, std::span<const std::size_t>(order).subspan(start, len));
      const LossBreakdown l = train_step(m, opt, batch, cfg.weights, cfg.exec);
      if (on_step) on_step(l);
      const double wgt = static_cast<double>(len);
      pred += wgt * l.l_pred;
      recon += wgt * l.l_recon;
      spec += wgt * l.l_specific;
      shared += wgt * l.l_shared;
      ++result.steps;
    }
    LossBreakdown e;
    e.weights = cfg.weights;
    const double dn = static_cast<double>(n);
    e.l_pred = pred / dn;
    e.l_recon = recon / dn;
    e.l_specific = spec / dn;
    e.l_shared = shared / dn;
    e.l_final = LossBreakdown::combine(e.l_pred, e.l_recon, e.l_specific, e.l_shared, cfg.weights);
    result.history.push_back(e);
  }
  return result;
}

std::vector<double> predict(const ModelParams& m, const Matrix& x, Exec exec) {
  const ForwardCache fc = forward_cached(m, x, exec);
  const auto& y = fc.at(BlockId::kGPred).z;
  return {y.flat().begin(), y.flat().end()};
}

double predict_one(const ModelParams& m, std::span<const double> x) {
  Matrix row(1, x.size());
  std::copy(x.begin(), x.end(), row.row(0).begin());
  return predict(m, row, Exec::kSerial).front();
}

// ---------------------------------------------------------------------------
// Evaluation

BinaryMetrics BinaryMetrics::from_counts(std::size_t tp, std::size_t fp, std::size_t fn,
                                         std::size_t tn) {
  BinaryMetrics b;
  b.tp = tp;
  b.fp = fp;
  b.fn = fn;
  b.tn = tn;
  const auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  b.accuracy = ratio(tp + tn, b.total());
  b.precision = ratio(tp, tp + fp);
  b.recall = ratio(tp, tp + fn);
  const double pr = b.precision + b.recall;
  b.f1 = pr > 0 ? 2.0 * b.precision * b.recall / pr : 0.0;
  return b;
}

EvalReport evaluate_predictions(std::span<const double> probabilities,
                                std::span<const int> labels,
                                std::span<const std::string> domain_tags) {
  const std::size_t n = probabilities.size();
  if (n == 0) throw DataError("test set is empty");
  if (labels.size() != n || domain_tags.size() != n) {
    throw UsageError("predictions, labels and domain tags differ in length");
  }
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    void add(bool pred, bool truth) {
      if (pred && truth) ++tp;
      else if (pred) ++fp;
      else if (truth) ++fn;
      else ++tn;
    }
  };
  Counts all;
  std::map<std::string, Counts> groups;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("test labels must be 0 or 1");
    const bool pred = probabilities[i] >= 0.5;
    const bool truth = labels[i] == 1;
    all.add(pred, truth);
    groups[domain_tags[i]].add(pred, truth);
  }
  EvalReport r;
  r.overall = BinaryMetrics::from_counts(all.tp, all.fp, all.fn, all.tn);
  for (const auto& [tag, c] : groups) {
    r.per_domain[tag] = BinaryMetrics::from_counts(c.tp, c.fp, c.fn, c.tn);
  }
  return r;
}

EvalReport evaluate(const ModelParams& m, const Matrix& x, std::span<const int> labels,
                    std::span<const std::string> domain_tags, Exec exec) {
  if (x.rows() == 0) throw DataError("test set is empty");
  const auto p = predict(m, x, exec);
  return evaluate_predictions(p, labels, domain_tags);
}

double nearest_centroid_accuracy(const Matrix& train_z, std::span<const std::string> train_tags,
                                 const Matrix& test_z, std::span<const std::string> test_tags) {
  if (train_z.rows() != train_tags.size() || test_z.rows() != test_tags.size()) {
    throw UsageError("latent rows and tags differ in length");
  }
  if (train_z.rows() == 0 || test_z.rows() == 0) throw DataError("probe needs nonempty sets");
  std::map<std::string, std::pair<std::vector<double>, std::size_t>> sums;
  for (std::size_t r = 0; r < train_z.rows(); ++r) {
    auto& [sum, count] = sums[train_tags[r]];
    sum.resize(train_z.cols(), 0.0);
    for (std::size_t c = 0; c < train_z.cols(); ++c) sum[c] += train_z(r, c);
    ++count;
  }
  for (auto& [tag, entry] : sums) {
    for (double& v : entry.first) v /= static_cast<double>(entry.second);
  }
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test_z.rows(); ++r) {
    const std::string* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [tag, entry] : sums) {
      double d = 0;
      for (std::size_t c = 0; c < test_z.cols(); ++c) {
        d += (test_z(r, c) - entry.first[c]) * (test_z(r, c) - entry.first[c]);
      }
      if (d < best_d) {
        best_d = d;
        best = &tag;
      }
    }
    if (best && *best == test_tags[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_z.rows());
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double final_loss(const ModelParams& m, const Batch& b, const LossWeights& w) {
  return losses(forward(m, b.x, Exec::kSerial), b, w).l_final;
}

}  // namespace

std::vector<GradCheckGroup> grad_check(const ModelParams& m, const Batch& batch,
                                       const LossWeights& w, double eps,
                                       const std::function<void(ModelGradients&)>& tamper) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw UsageError("grad-check epsilon must be in (0, 1e-3]");
  ModelGradients g = final_loss_gradients(m, batch, w, nullptr, Exec::kSerial);
  if (tamper) tamper(g);

  std::vector<GradCheckGroup> groups;
  ModelParams probe = m;
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    const auto id = static_cast<BlockId>(b);
    GradCheckGroup group;
    group.name = block_name(id);
    group.adversary = is_adversary(id);
    const double sign = group.adversary ? -1.0 : 1.0;

    auto check = [&](std::span<double> params, std::span<const double> analytic_grad) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + eps;
        const double up = final_loss(probe, batch, w);
        params[i] = saved - eps;
        const double down = final_loss(probe, batch, w);
        params[i] = saved;
        const double numeric = sign * (up - down) / (2.0 * eps);
        const double analytic = sign * analytic_grad[i];
        const double abs_err = std::abs(analytic - numeric);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
        group.max_abs_error = std::max(group.max_abs_error, abs_err);
        group.max_rel_error = std::max(group.max_rel_error, abs_err / denom);
        ++group.parameters;
      }
    };
    DenseBlock& blk = probe.blocks[b];
    check(blk.w1.flat(), g[b].w1.flat());
    check(blk.b1, g[b].b1);
    check(blk.w2.flat(), g[b].w2.flat());
    check(blk.b2, g[b].b2);
    groups.push_back(group);
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

using json = nlohmann::ordered_json;

json matrix_json(const Matrix& a) {
  json rows = json::array();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    rows.push_back(std::vector<double>(a.row(r).begin(), a.row(r).end()));
  }
  return rows;
}

Matrix matrix_from(const json& j, std::size_t rows, std::size_t cols, const std::string& what) {
  if (!j.is_array() || j.size() != rows) throw DataError("checkpoint: bad shape for " + what);
  Matrix a(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = j[r].get<std::vector<double>>();
    if (row.size() != cols) throw DataError("checkpoint: bad shape for " + what);
    std::copy(row.begin(), row.end(), a.row(r).begin());
  }
  return a;
}

std::vector<double> vector_from(const json& j, std::size_t n, const std::string& what) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != n) throw DataError("checkpoint: bad shape for " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  json j;
  j["version"] = kCheckpointVersion;
  j["dims"] = {{"input", p.dims.input}, {"latent", p.dims.latent}, {"domains", p.dims.domains}};
  j["seed"] = p.seed;
  j["text_dim"] = ckpt.text_dim;
  j["partition_fingerprint"] = ckpt.partition_fingerprint;
  j["standardizer"] = {{"mean", ckpt.standardizer_mean}, {"std", ckpt.standardizer_std}};
  json blocks;
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    const auto& b = p.blocks[i];
    blocks[block_name(static_cast<BlockId>(i))] = {
        {"w1", matrix_json(b.w1)}, {"b1", b.b1}, {"w2", matrix_json(b.w2)}, {"b2", b.b2}};
  }
  j["blocks"] = std::move(blocks);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(1) << '\n';
  if (!out) throw DataError("cannot write " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  try {
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw DataError(path + ": unsupported checkpoint version");
    }
    Checkpoint c;
    ModelDims dims{j.at("dims").at("input").get<std::size_t>(),
                   j.at("dims").at("latent").get<std::size_t>(),
                   j.at("dims").at("domains").get<std::size_t>()};
    check_dims(dims);
    c.params = zero_model(dims);
    c.params.seed = j.at("seed").get<std::uint64_t>();
    c.text_dim = j.at("text_dim").get<std::size_t>();
    c.partition_fingerprint = j.at("partition_fingerprint").get<std::string>();
    c.standardizer_mean = j.at("standardizer").at("mean").get<std::vector<double>>();
    c.standardizer_std = j.at("standardizer").at("std").get<std::vector<double>>();
    if (c.text_dim > dims.input || c.standardizer_mean.size() != dims.input - c.text_dim ||
        c.standardizer_std.size() != c.standardizer_mean.size()) {
      throw DataError(path + ": standardizer does not match the network feature dimension");
    }
    for (std::size_t i = 0; i < kBlockCount; ++i) {
      const std::string name = block_name(static_cast<BlockId>(i));
      const json& jb = j.at("blocks").at(name);
      auto& b = c.params.blocks[i];
      b.w1 = matrix_from(jb.at("w1"), b.w1.rows(), b.w1.cols(), name + ".w1");
      b.b1 = vector_from(jb.at("b1"), b.b1.size(), name + ".b1");
      b.w2 = matrix_from(jb.at("w2"), b.w2.rows(), b.w2.cols(), name + ".w2");
      b.b2 = vector_from(jb.at("b2"), b.b2.size(), name + ".b2");
    }
    return c;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

void check_partition(const Checkpoint& ckpt, const std::string& fingerprint,
                     std::size_t domain_dim) {
  if (domain_dim != ckpt.params.dims.domains) {
    throw DataError("domain embedding has " + std::to_string(domain_dim) +
                    " communities but the model was trained with " +
                    std::to_string(ckpt.params.dims.domains));
  }
  if (fingerprint != ckpt.partition_fingerprint) {
    throw DataError("partition fingerprint " + fingerprint +
                    " differs from the one the model was trained against (" +
                    ckpt.partition_fingerprint + ")");
  }
}

}  // namespace fnd
