#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ghostlab/nnet.hpp"
#include "ghostlab/preprocess.hpp"

namespace ghostlab::detect {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr std::size_t kMinInstancePoints = 3;

struct Detection {
  std::vector<std::size_t> point_indices;  // sorted, de-duplicated origin indices
  int cls = 0;                             // foreground class index
  double score = 0.0;
};

struct Proposal {
  std::size_t seed = 0;
  std::vector<std::size_t> members;  // sorted
  double seed_confidence = 0.0;
};

/// One proposal per row i of S: {j : S_ij < k1}; proposals with fewer than three points are dropped.
std::vector<Proposal> sgpn_propose(const Matrix& S, const Vector& confidence, double k1);

/// Row proposals computed straight from embeddings, without materializing S.
std::vector<Proposal> sgpn_propose_embeddings(const Matrix& embeddings, const Vector& confidence, double k1);

struct Candidate {
  std::vector<std::size_t> points;  // sorted
  double score = 0.0;
  std::size_t seed = 0;
};

/// Greedy suppression by point IoU, highest score first (ties: lower seed). Returns kept positions into `cands`.
std::vector<std::size_t> nms(std::span<const Candidate> cands, double iou_threshold = 0.5);

struct InstanceClass {
  int cls = 0;
  double score = 0.0;
};

/// Majority vote over per-point non-background argmax; score = mean winning-class probability x mean confidence.
/// `probs` holds softmax rows; `confidence` may be empty (treated as 1).
InstanceClass classify_instance(std::span<const std::size_t> points, const Matrix& probs, const Vector& confidence);

inline constexpr int kNoise = -1;

/// Standard DBSCAN with Euclidean distance and inclusive eps; neighbourhoods count the point itself.
/// Labels clusters 0, 1, ... in discovery order; kNoise for outliers.
std::vector<int> dbscan_cluster(const Matrix& points, double eps, int min_pts);

struct DbscanParams {
  double eps = 1.2;
  int min_pts = 2;
  double doppler_weight = 0.6;  // m per m/s
  double time_weight = 2.0;     // m per s
  double background_threshold = 1.0 / 3.0;
};

/// Representative cloud index for each origin (first occurrence), ordered by origin.
std::vector<std::size_t> unique_origins(const prep::FixedCloud& cloud);

/// Background filter on the semantic output, clustering in (x, y, w_v doppler, w_t time), classification with
/// unit confidence.
std::vector<Detection> dbscan_pipeline(const Matrix& probs, const prep::FixedCloud& cloud, const DbscanParams& p);

struct SgpnParams {
  double k1 = 1.0;
  double nms_iou = 0.5;
};

/// Proposals from embedding rows, class/score per proposal, NMS, in origin-index space.
std::vector<Detection> sgpn_pipeline(const nn::Output& out, const prep::FixedCloud& cloud, const SgpnParams& p);

}  // namespace ghostlab::detect
