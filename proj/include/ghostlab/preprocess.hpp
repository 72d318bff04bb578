#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "ghostlab/core.hpp"

namespace ghostlab::prep {

inline constexpr int kFeatureCount = 5;  // x, y, amplitude, doppler, rel_timestamp

struct AccumulatedPoint {
  RadarPoint point;
  double rel_time = 0.0;  // 0 for the newest cycle, then -cycle_time, -2 cycle_time, ...
  int age = 0;            // cycles behind the newest frame
};

/// Union of consecutive frames given oldest first. Throws std::invalid_argument on a cycle gap.
std::vector<AccumulatedPoint> accumulate(std::span<const Frame> frames, double cycle_time = 0.1);

struct CloudPoint {
  double x = 0.0;
  double y = 0.0;
  double amplitude = 0.0;
  double doppler = 0.0;
  double rel_time = 0.0;
  int age = 0;
  Annotation annotation;
  std::size_t origin = 0;  // index into the accumulated point list; shared by duplicates
};

struct FixedCloud {
  std::vector<CloudPoint> points;
  std::size_t source_size = 0;  // number of accumulated points before resampling

  std::size_t size() const { return points.size(); }
};

/// Brings the accumulation to exactly `target` points. Upsampling appends duplicates of the
/// largest-|doppler| points (cycling through that ranking); downsampling drops the oldest cycle
/// first and within a cycle the smallest |doppler|. Throws std::invalid_argument on empty input.
FixedCloud resample(std::span<const AccumulatedPoint> points, std::size_t target);

struct PreprocessConfig {
  int n_cycles = 3;
  std::size_t n_points = 2560;
  bool standardize = false;
};

/// Cloud for the accumulation window ending at `frame_index`; needs frame_index >= n_cycles - 1.
FixedCloud make_cloud(const Sequence& seq, std::size_t frame_index, const PreprocessConfig& cfg);

struct FeatureStats {
  std::array<double, kFeatureCount> mean{0, 0, 0, 0, 0};
  std::array<double, kFeatureCount> stddev{1, 1, 1, 1, 1};
};

FeatureStats compute_feature_stats(std::span<const FixedCloud> clouds);

/// N x 5 matrix with columns (x, y, amplitude, doppler, rel_timestamp), optionally standardized.
Eigen::MatrixXd featurize(const FixedCloud& cloud, const FeatureStats* stats = nullptr);

/// N x 2 matrix of BEV coordinates (unstandardized), used for neighborhoods.
Eigen::MatrixXd coordinates(const FixedCloud& cloud);

struct PointTargets {
  std::vector<int> cls;       // class index, 0 = background, kIgnoreTarget for ignore
  std::vector<int> instance;  // instance id (0 for background and ignore)
};

PointTargets make_targets(const FixedCloud& cloud, const ClassConfig& cfg);

}  // namespace ghostlab::prep
