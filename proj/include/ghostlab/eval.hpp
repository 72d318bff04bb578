#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ghostlab/core.hpp"
#include "ghostlab/detect.hpp"
#include "ghostlab/preprocess.hpp"

namespace ghostlab::eval {

/// |a ∩ b| / |a ∪ b| for sorted index sets; 0 when both are empty.
double point_iou(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct GroundTruth {
  std::vector<std::size_t> points;  // sorted origin indices
  int cls = 0;
  int instance_id = 0;
  bool difficult = false;  // fewer than the minimum instance size; neither counted nor penalized
};

/// Ground truth of one accumulation window, indexed by origin index.
struct FrameTruth {
  std::vector<GroundTruth> instances;
  std::vector<Annotation> annotations;  // per origin index present in the cloud
  std::vector<bool> present;            // origin survived resampling
  std::vector<int> targets;             // map_labels per origin
};

FrameTruth frame_truth(const prep::FixedCloud& cloud, const ClassConfig& cfg,
                       std::size_t min_points = detect::kMinInstancePoints);

enum class MatchFlag { TP, FP, Ignored };

struct MatchResult {
  std::vector<MatchFlag> flags;  // per detection, in input order
  std::vector<int> matched_gt;   // GT index or -1
  int n_gt = 0;                  // countable (non-difficult) ground truths
  int unmatched_gt = 0;
};

/// Greedy VOC matching by descending score, class-aware, each GT matched at most once. Detections whose
/// points mostly lie on IGNORE/sketchy annotations are ignored, as are matches to difficult GTs.
MatchResult match_detections(std::span<const detect::Detection> dets, const FrameTruth& truth, double iou_threshold);

struct ScoredFlag {
  double score = 0.0;
  bool tp = false;
};

struct PRPoint {
  double score, precision, recall;
};

struct PRCurve {
  std::vector<PRPoint> points;  // one per distinct score, descending
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

PRCurve pr_curve(std::span<const ScoredFlag> dets, int n_gt);

enum class Interpolation { AllPoint, ElevenPoint };

/// Area under the precision envelope. Requires n_gt >= 1.
double average_precision(std::span<const ScoredFlag> dets, int n_gt, Interpolation interp = Interpolation::AllPoint);

/// Score threshold at the curve point with the highest F1 (ties: higher threshold). Throws on an empty curve.
double best_f1_threshold(const PRCurve& curve);

struct F1Report {
  std::vector<double> per_class;  // foreground classes 1..C-1 at positions 0..C-2; NaN when undefined
  double macro = 0.0;
};

F1Report f1_semantic(std::span<const int> predictions, std::span<const int> targets, int num_classes);

// ---------------------------------------------------------------------------
// False-positive attribution

enum class FpCause { Background, IntraClass, Localization, MP12, MP22, MP23, OMP, kCount };

std::string_view to_string(FpCause c);

struct FalsePositive {
  const detect::Detection* det = nullptr;
  const FrameTruth* truth = nullptr;
};

struct Attribution {
  std::array<int, static_cast<std::size_t>(FpCause::kCount)> counts{};
  int total = 0;

  double fraction(FpCause c) const;
  double ghost_share() const;
};

/// Cause of one FP by majority annotation of its points (ties: MP12 > MP22 > MP23 > OMP > intra > loc > bg).
FpCause attribute(const detect::Detection& det, const FrameTruth& truth, const ClassConfig& cfg);

Attribution fp_attribution(std::span<const FalsePositive> fps, const ClassConfig& cfg);

/// Object class behind a foreground class index (NONE for merged classes).
ObjectClass class_group(int cls, const ClassConfig& cfg);

}  // namespace ghostlab::eval
