#include "ghostlab/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ghostlab::prep {

std::vector<AccumulatedPoint> accumulate(std::span<const Frame> frames, double cycle_time) {
  std::vector<AccumulatedPoint> out;
  if (frames.empty()) return out;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].cycle_index != frames[i - 1].cycle_index + 1) {
      throw std::invalid_argument("accumulate: frames not consecutive (cycle " +
                                  std::to_string(frames[i - 1].cycle_index) + " followed by " +
                                  std::to_string(frames[i].cycle_index) + ")");
    }
  }
  const int newest = static_cast<int>(frames.size()) - 1;
  for (int f = 0; f <= newest; ++f) {
    const int age = newest - f;
    for (const auto& p : frames[static_cast<std::size_t>(f)].points) {
      out.push_back({p, -cycle_time * age, age});
    }
  }
  return out;
}

FixedCloud resample(std::span<const AccumulatedPoint> points, std::size_t target) {
  if (points.empty()) throw std::invalid_argument("resample: empty point set");
  const std::size_t n = points.size();

  auto to_cloud = [&](std::size_t i) {
    const auto& ap = points[i];
    return CloudPoint{ap.point.x,   ap.point.y, ap.point.amplitude, ap.point.doppler, ap.rel_time,
                      ap.age,       ap.point.annotation, i};
  };

  FixedCloud cloud;
  cloud.source_size = n;
  cloud.points.reserve(target);

  if (n <= target) {
    for (std::size_t i = 0; i < n; ++i) cloud.points.push_back(to_cloud(i));
    if (n == target) return cloud;
    std::vector<std::size_t> rank(n);
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
      const double da = std::abs(points[a].point.doppler);
      const double db = std::abs(points[b].point.doppler);
      if (da != db) return da > db;
      return points[a].age < points[b].age;
    });
    for (std::size_t j = 0; cloud.points.size() < target; ++j) cloud.points.push_back(to_cloud(rank[j % n]));
    return cloud;
  }

  std::vector<std::size_t> removal(n);
  std::iota(removal.begin(), removal.end(), 0);
  std::stable_sort(removal.begin(), removal.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].age != points[b].age) return points[a].age > points[b].age;
    return std::abs(points[a].point.doppler) < std::abs(points[b].point.doppler);
  });
  std::vector<bool> drop(n, false);
  for (std::size_t j = 0; j < n - target; ++j) drop[removal[j]] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (!drop[i]) cloud.points.push_back(to_cloud(i));
  }
  return cloud;
}

FixedCloud make_cloud(const Sequence& seq, std::size_t frame_index, const PreprocessConfig& cfg) {
  const auto cycles = static_cast<std::size_t>(cfg.n_cycles);
  if (cycles == 0 || frame_index + 1 < cycles || frame_index >= seq.frames.size()) {
    throw std::out_of_range("make_cloud: frame " + std::to_string(frame_index) + " has no full accumulation window");
  }
  const std::span<const Frame> window(seq.frames.data() + (frame_index + 1 - cycles), cycles);
  const auto acc = accumulate(window, seq.sensor.cycle_time);
  if (acc.empty()) {
    // An all-empty window still has to produce a fixed-size input; pad with a single inert point.
    AccumulatedPoint pad;
    pad.point.x = seq.sensor.range_min;
    pad.point.annotation.label = Label::Ignore;
    FixedCloud c = resample(std::span<const AccumulatedPoint>(&pad, 1), cfg.n_points);
    c.source_size = 0;
    return c;
  }
  return resample(acc, cfg.n_points);
}

FeatureStats compute_feature_stats(std::span<const FixedCloud> clouds) {
  std::array<double, kFeatureCount> sum{}, sq{};
  double count = 0.0;
  for (const auto& c : clouds) {
    for (const auto& p : c.points) {
      const std::array<double, kFeatureCount> v{p.x, p.y, p.amplitude, p.doppler, p.rel_time};
      for (int k = 0; k < kFeatureCount; ++k) {
        sum[k] += v[k];
        sq[k] += v[k] * v[k];
      }
      count += 1.0;
    }
  }
  FeatureStats st;
  if (count == 0.0) return st;
  for (int k = 0; k < kFeatureCount; ++k) {
    st.mean[k] = sum[k] / count;
    const double var = std::max(0.0, sq[k] / count - st.mean[k] * st.mean[k]);
    st.stddev[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return st;
}

Eigen::MatrixXd featurize(const FixedCloud& cloud, const FeatureStats* stats) {
  Eigen::MatrixXd f(static_cast<Eigen::Index>(cloud.size()), kFeatureCount);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    f.row(static_cast<Eigen::Index>(i)) << p.x, p.y, p.amplitude, p.doppler, p.rel_time;
  }
  if (stats) {
    for (int k = 0; k < kFeatureCount; ++k) f.col(k) = (f.col(k).array() - stats->mean[k]) / stats->stddev[k];
  }
  return f;
}

Eigen::MatrixXd coordinates(const FixedCloud& cloud) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(cloud.size()), 2);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    c(static_cast<Eigen::Index>(i), 0) = cloud.points[i].x;
    c(static_cast<Eigen::Index>(i), 1) = cloud.points[i].y;
  }
  return c;
}

PointTargets make_targets(const FixedCloud& cloud, const ClassConfig& cfg) {
  PointTargets t;
  t.cls.reserve(cloud.size());
  t.instance.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const int c = map_labels(p.annotation, cfg);
    t.cls.push_back(c);
    t.instance.push_back(c > 0 ? p.annotation.instance_id : 0);
  }
  return t;
}

}  // namespace ghostlab::prep
