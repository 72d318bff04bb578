#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ghostlab/core.hpp"
#include "ghostlab/preprocess.hpp"

namespace ghostlab::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

struct ModelShape {
  int input = prep::kFeatureCount;
  int hidden = 64;
  int k = 16;        // neighborhood size in (x, y), the point itself included
  int embed = 16;
  int classes = 2;   // background included
  bool operator==(const ModelShape&) const = default;
};

/// All weights in one flat vector; matrices are column-major views into it.
///
/// Layout: two neighborhood blocks (affine + SiLU, then mean over the k nearest
/// neighbours concatenated with the point's own activation), one trunk layer, and
/// three heads: class logits, embedding, confidence (sigmoid).
class ModelParams {
 public:
  explicit ModelParams(const ModelShape& shape = {});

  /// Scaled-normal initialization, deterministic for a seed.
  static ModelParams random(const ModelShape& shape, std::uint64_t seed);

  const ModelShape& shape() const { return shape_; }
  Vector& flat() { return flat_; }
  const Vector& flat() const { return flat_; }
  Eigen::Index size() const { return flat_.size(); }

  enum Block { W1, B1, W2, B2, W3, B3, WC, BC, WE, BE, WQ, BQ, kBlockCount };
  MatrixMap block(Block b) { return view(flat_.data(), b); }
  ConstMatrixMap block(Block b) const { return cview(flat_.data(), b); }
  MatrixMap block_of(Vector& v, Block b) const { return view(v.data(), b); }

  bool operator==(const ModelParams& o) const { return shape_ == o.shape_ && flat_ == o.flat_; }

 private:
  struct Slot {
    Eigen::Index offset, rows, cols;
  };
  MatrixMap view(double* base, Block b) const {
    const auto& s = slots_[b];
    return MatrixMap(base + s.offset, s.rows, s.cols);
  }
  ConstMatrixMap cview(const double* base, Block b) const {
    const auto& s = slots_[b];
    return ConstMatrixMap(base + s.offset, s.rows, s.cols);
  }

  ModelShape shape_;
  std::array<Slot, kBlockCount> slots_{};
  Vector flat_;
};

/// k nearest neighbours of every point in (x, y), self included, ordered by (distance, index).
/// Result is N x k row-major.
std::vector<int> knn(const Matrix& coords, int k);

struct ForwardCache {
  Matrix input;  // N x in
  std::vector<int> neighbors;
  Matrix z1, a1, c1, z2, a2, c2, z3, trunk;
};

struct Output {
  Matrix logits;      // N x classes
  Matrix embeddings;  // N x embed
  Vector confidence;  // N, in [0, 1]
};

/// Throws std::invalid_argument for non-finite input or N < k.
Output forward(const ModelParams& params, const Matrix& features, const Matrix& coords,
               ForwardCache* cache = nullptr);
/// Same as above with precomputed neighbours.
Output forward(const ModelParams& params, const Matrix& features, std::vector<int> neighbors,
               ForwardCache* cache = nullptr);

/// Gradient w.r.t. all parameters from gradients w.r.t. the three outputs.
Vector backward(const ModelParams& params, const ForwardCache& cache, const Output& out, const Matrix& d_logits,
                const Matrix& d_embeddings, const Vector& d_confidence);

Matrix softmax(const Matrix& logits);

// ---------------------------------------------------------------------------
// Losses

struct LossWeights {
  std::vector<double> class_weights;  // per class, background first
  double k1 = 1.0;
  double k2 = 2.0;
  double alpha = 2.0;  // hinge weight for same-class / different-instance pairs
  double semantic = 1.0;
  double similarity = 1.0;
  double confidence = 1.0;

  void validate() const;
};

/// Frequency balancing: s_l = 1 / (c * share_l). Throws std::invalid_argument if a class has no points.
std::vector<double> class_weights_from_counts(std::span<const double> counts);
std::vector<double> class_weights(std::span<const prep::PointTargets> targets, const ClassConfig& cfg);

struct LossValue {
  double value = 0.0;
  Matrix grad;  // gradient w.r.t. the loss input (same shape)
};

/// Mean over non-ignore points of weight[target] * cross entropy.
LossValue semantic_loss(const Matrix& logits, std::span<const int> targets, std::span<const double> class_weights);

/// Pairwise Euclidean distances of embedding rows.
Matrix similarity_matrix(const Matrix& embeddings);

struct PairTargets {
  std::vector<int> cls;       // 0 background, >0 class, kIgnoreTarget ignore
  std::vector<int> instance;  // group id for foreground points
};

/// Double-hinge similarity loss over unordered pairs of S with (bg, fg) / (fg, fg) balancing.
/// The gradient is returned w.r.t. S (upper triangle filled, symmetric).
LossValue similarity_loss(const Matrix& S, const PairTargets& targets, const LossWeights& w);

/// Same loss evaluated directly on embeddings; gradient w.r.t. the embeddings.
LossValue similarity_loss_embeddings(const Matrix& embeddings, const PairTargets& targets, const LossWeights& w);

/// IoU between the proposal {j : S_ij < k1} and i's ground-truth instance (foreground points),
/// 0 for background. Ignore points get 0 and are excluded from both sets.
Vector confidence_targets(const Matrix& S, const PairTargets& targets, double k1);

/// Mean squared error over non-ignore points; gradient w.r.t. conf.
LossValue confidence_loss(const Vector& conf, const Vector& targets, std::span<const int> cls);

// ---------------------------------------------------------------------------
// Training

struct Sample {
  Matrix features;            // N x 5, already standardized if enabled
  std::vector<int> neighbors;  // knn(coords, k)
  prep::PointTargets targets;
};

Sample make_sample(const prep::FixedCloud& cloud, const ClassConfig& cfg, const prep::FeatureStats* stats, int k);

struct LossBreakdown {
  double total = 0.0;
  double semantic = 0.0;
  double similarity = 0.0;
  double confidence = 0.0;
};

/// Weighted loss for one sample and its gradient. `subset` selects the points used for the similarity and
/// confidence terms (all points when empty). When `frozen_conf_targets` is given it replaces the targets
/// computed from the current embeddings (one value per subset point).
LossBreakdown loss_and_gradient(const ModelParams& params, const Sample& sample, std::span<const int> subset,
                                const LossWeights& w, Vector* grad, const Vector* frozen_conf_targets = nullptr);

struct TrainConfig {
  double lr = 1e-3;
  int steps = 2000;
  int batch = 1;
  int pair_points = 1024;  // M points sampled per cloud for the pairwise terms
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int log_every = 0;  // 0 disables progress logging
};

struct LossRecord {
  int step = 0;
  LossBreakdown loss;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> curve;
};

using ProgressFn = std::function<void(const LossRecord&)>;

/// Adaptive-moment gradient descent; deterministic for a fixed seed.
TrainResult train(ModelParams params, std::span<const Sample> data, const LossWeights& w, const TrainConfig& cfg,
                  const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct Model {
  ModelParams params;
  ClassConfig classes;
  prep::PreprocessConfig preprocess;
  prep::FeatureStats stats;
  LossWeights loss;

  /// Network outputs for a cloud, applying the stored feature standardization.
  Output run(const prep::FixedCloud& cloud) const;
  Matrix features(const prep::FixedCloud& cloud) const;
};

void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
std::string model_to_string(const Model& m);
Model model_from_string(const std::string& text);

}  // namespace ghostlab::nn
