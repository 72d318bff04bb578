#pragma once

// Randomized oracle suites shared by the unit tests (small sizes) and the acceptance binary (full sizes).

#include <cstdint>
#include <string>

namespace checks {

struct Outcome {
  bool ok = true;
  std::string detail;  // first failure, or a summary of the worst observed error
  double seconds = 0.0;
};

struct GeometryTolerances {
  double involution = 1e-12;
  double mirror_identity = 1e-9;
  double doppler_rel = 1e-4;
  double doppler_floor = 1e-3;  // m/s, denominator floor for near-zero Dopplers
  double fd_step = 1e-5;
  double fermat_eps = 1e-4;
};

Outcome geometry_suite(int configs, std::uint64_t seed, const GeometryTolerances& tol = {});

Outcome resample_suite(int clouds, std::uint64_t seed, std::size_t target = 2560);

struct GradientTolerances {
  double fd_step = 1e-5;
  double max_rel = 1e-4;
  double floor = 1e-6;
};

/// Semantic, similarity and confidence terms checked separately on an 8-point cloud and a tiny model.
Outcome gradient_suite(int trials, std::uint64_t seed, const GradientTolerances& tol = {});

Outcome dbscan_suite(int sets, std::uint64_t seed);
Outcome nms_suite(int cases, std::uint64_t seed);
Outcome ap_suite(int cases, std::uint64_t seed, double tol = 1e-12);

}  // namespace checks

namespace checks {

/// Runs every CLI stage on a small experiment inside `workdir`, then replays each stage from its manifest
/// into a fresh location and requires byte-identical outputs.
Outcome determinism_suite(const std::string& workdir, const std::string& config_dir, int train_steps = 10);

}  // namespace checks
