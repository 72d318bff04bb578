#include "ghostlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace ghostlab::eval {

double point_iou(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

FrameTruth frame_truth(const prep::FixedCloud& cloud, const ClassConfig& cfg, std::size_t min_points) {
  FrameTruth t;
  t.annotations.resize(cloud.source_size);
  t.present.assign(cloud.source_size, false);
  t.targets.assign(cloud.source_size, kIgnoreTarget);
  for (const auto& p : cloud.points) {
    if (p.origin >= cloud.source_size || t.present[p.origin]) continue;
    t.present[p.origin] = true;
    t.annotations[p.origin] = p.annotation;
    t.targets[p.origin] = map_labels(p.annotation, cfg);
  }
  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;  // (instance, class) -> origins
  for (std::size_t o = 0; o < cloud.source_size; ++o) {
    if (!t.present[o] || t.targets[o] <= 0) continue;
    groups[{t.annotations[o].instance_id, t.targets[o]}].push_back(o);
  }
  for (auto& [key, pts] : groups) {
    GroundTruth g;
    g.instance_id = key.first;
    g.cls = key.second;
    g.difficult = pts.size() < min_points;
    g.points = std::move(pts);
    t.instances.push_back(std::move(g));
  }
  return t;
}

MatchResult match_detections(std::span<const detect::Detection> dets, const FrameTruth& truth, double iou_threshold) {
  MatchResult r;
  r.flags.assign(dets.size(), MatchFlag::FP);
  r.matched_gt.assign(dets.size(), -1);
  for (const auto& g : truth.instances) r.n_gt += g.difficult ? 0 : 1;

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<bool> taken(truth.instances.size(), false);
  for (std::size_t d : order) {
    const auto& det = dets[d];
    std::size_t on_ignore = 0;
    for (auto o : det.point_indices) {
      if (o < truth.annotations.size() && truth.present[o]) {
        const auto& a = truth.annotations[o];
        if (a.label == Label::Ignore || a.sketchy) ++on_ignore;
      }
    }
    if (2 * on_ignore > det.point_indices.size()) {
      r.flags[d] = MatchFlag::Ignored;
      continue;
    }
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t gi = 0; gi < truth.instances.size(); ++gi) {
      const auto& g = truth.instances[gi];
      if (g.cls != det.cls) continue;
      const double iou = point_iou(det.point_indices, g.points);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0 && best > iou_threshold) {
      const auto gi = static_cast<std::size_t>(best_gt);
      if (truth.instances[gi].difficult) {
        r.flags[d] = MatchFlag::Ignored;
      } else if (!taken[gi]) {
        taken[gi] = true;
        r.flags[d] = MatchFlag::TP;
        r.matched_gt[d] = best_gt;
      }
    }
  }
  int matched = 0;
  for (std::size_t gi = 0; gi < truth.instances.size(); ++gi) matched += (taken[gi] ? 1 : 0);
  r.unmatched_gt = r.n_gt - matched;
  return r;
}

PRCurve pr_curve(std::span<const ScoredFlag> dets, int n_gt) {
  std::vector<ScoredFlag> sorted(dets.begin(), dets.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
  PRCurve c;
  for (std::size_t i = 0; i < sorted.size();) {
    const double s = sorted[i].score;
    // Tied scores enter the curve together: a threshold cannot separate them.
    for (; i < sorted.size() && sorted[i].score == s; ++i) {
      if (sorted[i].tp) ++c.tp;
      else ++c.fp;
    }
    const double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double recall = n_gt > 0 ? static_cast<double>(c.tp) / n_gt : 0.0;
    c.points.push_back({s, precision, recall});
  }
  c.fn = n_gt - c.tp;
  return c;
}

double average_precision(std::span<const ScoredFlag> dets, int n_gt, Interpolation interp) {
  if (n_gt < 1) throw std::invalid_argument("average_precision: need at least one ground truth");
  const PRCurve c = pr_curve(dets, n_gt);
  const std::size_t n = c.points.size();
  std::vector<double> envelope(n);
  double run = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    run = std::max(run, c.points[i].precision);
    envelope[i] = run;
  }
  if (interp == Interpolation::ElevenPoint) {
    double ap = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double level = t / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (c.points[i].recall >= level - 1e-12) p = std::max(p, c.points[i].precision);
      }
      ap += p / 11.0;
    }
    return ap;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (c.points[i].recall - prev_recall) * envelope[i];
    prev_recall = c.points[i].recall;
  }
  return ap;
}

double best_f1_threshold(const PRCurve& curve) {
  if (curve.points.empty()) throw std::invalid_argument("best_f1_threshold: no detections");
  double best_f1 = -1.0, threshold = curve.points.front().score;
  for (const auto& p : curve.points) {
    const double f1 = (p.precision + p.recall) > 0.0 ? 2.0 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
    if (f1 > best_f1) {
      best_f1 = f1;
      threshold = p.score;
    }
  }
  return threshold;
}

F1Report f1_semantic(std::span<const int> predictions, std::span<const int> targets, int num_classes) {
  if (predictions.size() != targets.size()) throw std::invalid_argument("f1_semantic: size mismatch");
  std::vector<double> tp(static_cast<std::size_t>(num_classes), 0.0), fp = tp, fn = tp;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int t = targets[i];
    if (t == kIgnoreTarget) continue;
    const int p = predictions[i];
    if (p == t) {
      tp[static_cast<std::size_t>(t)] += 1.0;
    } else {
      fp[static_cast<std::size_t>(p)] += 1.0;
      fn[static_cast<std::size_t>(t)] += 1.0;
    }
  }
  F1Report r;
  double sum = 0.0;
  int defined = 0;
  for (int c = 1; c < num_classes; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    const double denom = 2.0 * tp[uc] + fp[uc] + fn[uc];
    const double f1 = denom > 0.0 ? 2.0 * tp[uc] / denom : std::numeric_limits<double>::quiet_NaN();
    r.per_class.push_back(f1);
    if (!std::isnan(f1)) {
      sum += f1;
      ++defined;
    }
  }
  r.macro = defined ? sum / defined : std::numeric_limits<double>::quiet_NaN();
  return r;
}

// ---------------------------------------------------------------------------

std::string_view to_string(FpCause c) {
  switch (c) {
    case FpCause::Background: return "BG";
    case FpCause::IntraClass: return "Intra Cls";
    case FpCause::Localization: return "Loc";
    case FpCause::MP12: return "MP-12";
    case FpCause::MP22: return "MP-22";
    case FpCause::MP23: return "MP-23";
    case FpCause::OMP: return "OMP";
    case FpCause::kCount: break;
  }
  return "?";
}

double Attribution::fraction(FpCause c) const {
  return total ? static_cast<double>(counts[static_cast<std::size_t>(c)]) / total : 0.0;
}

double Attribution::ghost_share() const {
  return fraction(FpCause::MP12) + fraction(FpCause::MP22) + fraction(FpCause::MP23) + fraction(FpCause::OMP);
}

ObjectClass class_group(int cls, const ClassConfig& cfg) {
  if (cfg.granularity != Granularity::PedCycl || cls <= 0) return ObjectClass::None;
  const int per_group = cfg.foreground_classes() / 2;
  return (cls - 1) / per_group == 0 ? ObjectClass::Pedestrian : ObjectClass::Cyclist;
}

FpCause attribute(const detect::Detection& det, const FrameTruth& truth, const ClassConfig& cfg) {
  std::array<int, static_cast<std::size_t>(FpCause::kCount)> votes{};
  const ObjectClass group = class_group(det.cls, cfg);
  for (auto o : det.point_indices) {
    FpCause c = FpCause::Background;
    if (o < truth.annotations.size() && truth.present[o]) {
      const auto& a = truth.annotations[o];
      switch (a.label) {
        case Label::Real:
          c = (group == ObjectClass::None || group == a.object_class) ? FpCause::Localization : FpCause::IntraClass;
          break;
        case Label::MP12: c = FpCause::MP12; break;
        case Label::MP22: c = FpCause::MP22; break;
        case Label::MP23: c = FpCause::MP23; break;
        case Label::OMP:
        case Label::Indistinguishable: c = FpCause::OMP; break;
        default: c = FpCause::Background; break;
      }
    }
    ++votes[static_cast<std::size_t>(c)];
  }
  constexpr std::array priority{FpCause::MP12, FpCause::MP22,         FpCause::MP23,      FpCause::OMP,
                                FpCause::IntraClass, FpCause::Localization, FpCause::Background};
  FpCause best = priority.front();
  for (auto c : priority) {
    if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

Attribution fp_attribution(std::span<const FalsePositive> fps, const ClassConfig& cfg) {
  Attribution a;
  for (const auto& fp : fps) {
    ++a.counts[static_cast<std::size_t>(attribute(*fp.det, *fp.truth, cfg))];
    ++a.total;
  }
  return a;
}

}  // namespace ghostlab::eval
