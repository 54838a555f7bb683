#pragma once

// Dual-subspace classifier. Two encoders map the input into a
// domain-specific and a cross-domain latent space; four decoders predict the
// label, reconstruct the input and recover the domain embedding from each
// latent. The cross-domain decoder plays a minimax game against its encoder.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fnd/linalg.hpp"
#include "fnd/parallel.hpp"

namespace fnd {

double sigmoid(double x);

/// z = sigmoid(W2 sigmoid(W1 x + b1) + b2).
struct DenseBlock {
  Matrix w1;  // hidden x in
  std::vector<double> b1;
  Matrix w2;  // out x hidden
  std::vector<double> b2;

  std::size_t in_dim() const { return w1.cols(); }
  std::size_t hidden_dim() const { return w1.rows(); }
  std::size_t out_dim() const { return w2.rows(); }

  /// ceil(max(in, out) / 2), at least 1.
  static std::size_t hidden_for(std::size_t in, std::size_t out);
  static DenseBlock zeros(std::size_t in, std::size_t out);
  /// Glorot-uniform weights, zero biases.
  static DenseBlock glorot(std::size_t in, std::size_t out, std::uint64_t seed);

  bool operator==(const DenseBlock&) const = default;
};

enum class BlockId : std::size_t {
  kFSpecific = 0,
  kFShared,
  kGPred,
  kGRecon,
  kGSpecific,
  kGShared,
};
constexpr std::size_t kBlockCount = 6;
const char* block_name(BlockId id);
/// True for the adversary's parameters (the cross-domain decoder).
constexpr bool is_adversary(BlockId id) { return id == BlockId::kGShared; }

struct ModelDims {
  std::size_t input = 0;   // D_in
  std::size_t latent = 0;  // d
  std::size_t domains = 0; // |C|
  bool operator==(const ModelDims&) const = default;
};

struct ModelParams {
  ModelDims dims;
  std::uint64_t seed = 0;
  std::array<DenseBlock, kBlockCount> blocks;

  DenseBlock& block(BlockId id) { return blocks[static_cast<std::size_t>(id)]; }
  const DenseBlock& block(BlockId id) const { return blocks[static_cast<std::size_t>(id)]; }
  bool operator==(const ModelParams&) const = default;
};

ModelParams init_model(const ModelDims& dims, std::uint64_t seed);
/// All weights and biases zero; every output is exactly 0.5.
ModelParams zero_model(const ModelDims& dims);

struct LossWeights {
  double recon = 1.0;     // lambda_1
  double specific = 10.0; // lambda_2
  double shared = 5.0;    // lambda_3
};

struct LossBreakdown {
  double l_pred = 0;
  double l_recon = 0;
  double l_specific = 0;
  double l_shared = 0;
  double l_final = 0;
  LossWeights weights;

  /// l_pred + l1 l_recon + l2 l_specific - l3 l_shared.
  static double combine(double pred, double recon, double specific, double shared,
                        const LossWeights& w);
};

/// Rows are examples.
struct Batch {
  Matrix x;         // batch x D_in, standardised inputs
  std::vector<double> y;  // labels in {0, 1}
  Matrix f_domain;  // batch x |C|
  std::size_t size() const { return x.rows(); }
};

struct Outputs {
  Matrix z_spec, z_shared;   // batch x d
  Matrix y_hat;              // batch x 1
  Matrix x_hat;              // batch x D_in
  Matrix d_spec, d_shared;   // batch x |C|
};

constexpr double kBceClamp = 1e-7;

Outputs forward(const ModelParams& m, const Matrix& x, Exec exec = Exec::kParallel);

/// Reconstruction target: the standardised input squashed through the
/// sigmoid, so it lies in the decoder's output range.
Matrix reconstruction_target(const Matrix& x);

/// Batch-mean losses.
LossBreakdown losses(const Outputs& out, const Batch& batch, const LossWeights& w);

struct BlockGrad {
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;
};
using ModelGradients = std::array<BlockGrad, kBlockCount>;

/// Exact backpropagation of the batch-mean L_final with respect to every
/// block (adversary included).
ModelGradients final_loss_gradients(const ModelParams& m, const Batch& batch,
                                    const LossWeights& w, LossBreakdown* loss = nullptr,
                                    Exec exec = Exec::kParallel);

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

struct AdamMoments {
  BlockGrad m, v;
};

/// Separate Adam states for the main parameters (theta_1) and the
/// adversary (theta_2).
struct OptimizerState {
  AdamConfig config;
  std::array<AdamMoments, kBlockCount> moments;
  std::int64_t main_steps = 0;
  std::int64_t adversary_steps = 0;

  static OptimizerState create(const ModelParams& m, const AdamConfig& config);
};

/// Step A: Adam descent on L_final for theta_1. Step B: forward again with the
/// new theta_1 and Adam ascent on L_final (descent on lambda_3 L_shared) for
/// theta_2. Returns the losses of step A's forward pass.
LossBreakdown train_step(ModelParams& m, OptimizerState& opt, const Batch& batch,
                         const LossWeights& w, Exec exec = Exec::kParallel);

struct TrainingSet {
  Matrix x;
  std::vector<double> y;
  Matrix f_domain;
  std::size_t size() const { return x.rows(); }
};

struct FitConfig {
  int epochs = 300;
  std::size_t batch_size = 64;
  LossWeights weights;
  AdamConfig adam;
  std::uint64_t seed = 0;
  Exec exec = Exec::kParallel;
};

struct FitResult {
  std::vector<LossBreakdown> history;  // per-epoch means
  std::size_t steps = 0;
};

/// Shuffled mini-batch training. `on_step`, if set, sees every per-batch
/// loss breakdown.
FitResult fit(ModelParams& m, const TrainingSet& train, const FitConfig& cfg,
              const std::function<void(const LossBreakdown&)>& on_step = {});

std::vector<double> predict(const ModelParams& m, const Matrix& x, Exec exec = Exec::kParallel);
double predict_one(const ModelParams& m, std::span<const double> x);

// ---------------------------------------------------------------------------
// Evaluation

struct BinaryMetrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;

  static BinaryMetrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn,
                                   std::size_t tn);
  std::size_t total() const { return tp + fp + fn + tn; }
};

struct EvalReport {
  BinaryMetrics overall;
  std::map<std::string, BinaryMetrics> per_domain;
};

/// Positive class = fake (1), threshold 0.5.
EvalReport evaluate_predictions(std::span<const double> probabilities,
                                std::span<const int> labels,
                                std::span<const std::string> domain_tags);
EvalReport evaluate(const ModelParams& m, const Matrix& x, std::span<const int> labels,
                    std::span<const std::string> domain_tags, Exec exec = Exec::kParallel);

/// Nearest-centroid probe: centroids per tag from (train_z, train_tags),
/// accuracy of assigning each test row to its closest centroid. Ties go to the
/// tag that sorts first.
double nearest_centroid_accuracy(const Matrix& train_z, std::span<const std::string> train_tags,
                                 const Matrix& test_z, std::span<const std::string> test_tags);

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckGroup {
  std::string name;
  bool adversary = false;  // checked against -L_final instead of L_final
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t parameters = 0;
};

/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
constexpr double kGradCheckFloor = 1e-6;

/// Central-difference check of the analytic gradients. theta_1 blocks are
/// checked against L_final, the adversary against -L_final. `tamper`, if set,
/// edits the analytic gradients before comparison (fault injection).
std::vector<GradCheckGroup> grad_check(const ModelParams& m, const Batch& batch,
                                       const LossWeights& w, double eps,
                                       const std::function<void(ModelGradients&)>& tamper = {});

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ModelParams params;
  // Standardizer of the network part; the first text_dim inputs are text.
  std::vector<double> standardizer_mean;
  std::vector<double> standardizer_std;
  std::size_t text_dim = 0;
  std::string partition_fingerprint;
};

constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
/// Throws DataError if the checkpoint was trained against another partition.
void check_partition(const Checkpoint& ckpt, const std::string& fingerprint,
                     std::size_t domain_dim);

}  // namespace fnd
