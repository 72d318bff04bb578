#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ghostlab/eval.hpp"
#include "oracles.hpp"

using namespace ghostlab;
using namespace ghostlab::eval;
using doctest::Approx;

namespace {

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v;
  for (std::size_t i = lo; i <= hi; ++i) v.push_back(i);
  return v;
}

Annotation real(int id, ObjectClass c = ObjectClass::Pedestrian) { return {id, Label::Real, c, std::nullopt, false}; }
Annotation ghost(Label l, int id) { return {id, l, ObjectClass::Pedestrian, 1, false}; }
Annotation clutter() { return {}; }

prep::FixedCloud cloud_of(const std::vector<Annotation>& anns) {
  prep::FixedCloud c;
  for (std::size_t i = 0; i < anns.size(); ++i) {
    prep::CloudPoint p;
    p.annotation = anns[i];
    p.origin = i;
    c.points.push_back(p);
  }
  c.source_size = anns.size();
  return c;
}

const ClassConfig kRealOnly{Granularity::Merged, LabelSet::RealOnly};
const ClassConfig kPedCyclReal{Granularity::PedCycl, LabelSet::RealOnly};

// Ten real points of object 1, then ten clutter points.
FrameTruth one_object() {
  std::vector<Annotation> a(10, real(1));
  a.resize(20, clutter());
  return frame_truth(cloud_of(a), kRealOnly);
}

detect::Detection det(std::vector<std::size_t> pts, double score, int cls = 1) { return {std::move(pts), cls, score}; }

}  // namespace

TEST_CASE("point IoU") {
  CHECK(point_iou(std::vector<std::size_t>{1, 2, 3}, std::vector<std::size_t>{2, 3, 4}) == 0.5);
  CHECK(point_iou(range(0, 4), range(0, 4)) == 1.0);
  CHECK(point_iou(range(0, 4), range(5, 9)) == 0.0);
  CHECK(point_iou(std::vector<std::size_t>{}, std::vector<std::size_t>{}) == 0.0);
}

TEST_CASE("ground truth groups instances and flags small ones") {
  std::vector<Annotation> a(5, real(1));
  a.push_back(real(2));
  a.push_back(real(2));
  a.push_back(ghost(Label::MP12, 3));
  a.push_back(clutter());
  const auto t = frame_truth(cloud_of(a), kRealOnly);
  REQUIRE(t.instances.size() == 2);
  CHECK(t.instances[0].points == range(0, 4));
  CHECK_FALSE(t.instances[0].difficult);
  CHECK(t.instances[1].difficult);
  CHECK(t.targets[7] == kIgnoreTarget);
  CHECK(t.targets[8] == 0);
}

TEST_CASE("matching at two thresholds") {
  const auto t = one_object();
  // IoU 6/10.
  const std::vector<detect::Detection> d06{det(range(0, 5), 0.9)};
  CHECK(match_detections(d06, t, 0.3).flags[0] == MatchFlag::TP);
  CHECK(match_detections(d06, t, 0.5).flags[0] == MatchFlag::TP);
  // IoU 4/10.
  const std::vector<detect::Detection> d04{det(range(0, 3), 0.9)};
  CHECK(match_detections(d04, t, 0.3).flags[0] == MatchFlag::TP);
  CHECK(match_detections(d04, t, 0.5).flags[0] == MatchFlag::FP);
  CHECK(match_detections(d04, t, 0.5).unmatched_gt == 1);
}

TEST_CASE("a ground truth is matched once, highest score first") {
  const auto t = one_object();
  const std::vector<detect::Detection> d{det(range(0, 7), 0.4), det(range(0, 9), 0.8)};
  const auto m = match_detections(d, t, 0.5);
  CHECK(m.flags[1] == MatchFlag::TP);
  CHECK(m.flags[0] == MatchFlag::FP);
  CHECK(m.n_gt == 1);
  CHECK(m.unmatched_gt == 0);
}

TEST_CASE("matching is class aware and honours ignore regions") {
  const auto t = one_object();
  const std::vector<detect::Detection> wrong{det(range(0, 9), 0.9, 2)};
  CHECK(match_detections(wrong, t, 0.3).flags[0] == MatchFlag::FP);

  std::vector<Annotation> a(6, real(1));
  for (int i = 0; i < 4; ++i) a.push_back({0, Label::Ignore, ObjectClass::None, std::nullopt, false});
  a.push_back(real(5));
  a.back().sketchy = true;
  a.push_back(clutter());
  const auto ti = frame_truth(cloud_of(a), kRealOnly);
  const std::vector<detect::Detection> on_ignore{det(std::vector<std::size_t>{6, 7, 8, 10, 11}, 0.7),
                                                 det(std::vector<std::size_t>{0, 6, 11}, 0.6)};
  const auto m = match_detections(on_ignore, ti, 0.3);
  CHECK(m.flags[0] == MatchFlag::Ignored);
  CHECK(m.flags[1] == MatchFlag::FP);

  // Ghost points in a real-only config are not an ignore region: a detection there is a false positive.
  std::vector<Annotation> g(5, real(1));
  for (int i = 0; i < 5; ++i) g.push_back(ghost(Label::MP22, 2));
  const auto tg = frame_truth(cloud_of(g), kRealOnly);
  const std::vector<detect::Detection> on_ghost{det(range(5, 9), 0.5)};
  CHECK(match_detections(on_ghost, tg, 0.3).flags[0] == MatchFlag::FP);
}

TEST_CASE("detections on difficult ground truth are ignored") {
  std::vector<Annotation> a{real(1), real(1), clutter(), clutter()};
  const auto t = frame_truth(cloud_of(a), kRealOnly);
  const std::vector<detect::Detection> d{det(std::vector<std::size_t>{0, 1, 2}, 0.9)};
  const auto m = match_detections(d, t, 0.5);
  CHECK(m.flags[0] == MatchFlag::Ignored);
  CHECK(m.n_gt == 0);
}

TEST_CASE("matching invariants on random frames") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> inst(0, 4), pt(0, 39), sz(3, 10);
  std::uniform_real_distribution<double> sc(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Annotation> a;
    for (int i = 0; i < 40; ++i) {
      const int id = inst(rng);
      a.push_back(id ? real(id) : clutter());
    }
    const auto t = frame_truth(cloud_of(a), kRealOnly);
    std::vector<detect::Detection> dets;
    for (int k = 0; k < 8; ++k) {
      std::set<std::size_t> s;
      const int n = sz(rng);
      while (static_cast<int>(s.size()) < n) s.insert(static_cast<std::size_t>(pt(rng)));
      dets.push_back(det(std::vector<std::size_t>(s.begin(), s.end()), sc(rng)));
    }
    const auto m = match_detections(dets, t, 0.3);
    std::set<int> used;
    int tp = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (m.flags[i] != MatchFlag::TP) continue;
      ++tp;
      CHECK(used.insert(m.matched_gt[i]).second);
    }
    CHECK(tp <= std::min<int>(static_cast<int>(dets.size()), m.n_gt));
    CHECK(m.unmatched_gt == m.n_gt - tp);
  }
}

TEST_CASE("average precision examples") {
  const std::vector<ScoredFlag> single{{0.7, true}};
  CHECK(average_precision(single, 1) == 1.0);
  CHECK(average_precision(single, 1, Interpolation::ElevenPoint) == Approx(1.0));
  const std::vector<ScoredFlag> tp_fp{{0.9, true}, {0.8, false}}, fp_tp{{0.9, false}, {0.8, true}};
  CHECK(average_precision(tp_fp, 1) == 1.0);
  CHECK(average_precision(fp_tp, 1) == 0.5);
  CHECK(average_precision(std::vector<ScoredFlag>{}, 3) == 0.0);
  CHECK_THROWS_AS(average_precision(single, 0), std::invalid_argument);

  // Half recall at full precision: eleven-point gives 6/11.
  const std::vector<ScoredFlag> half{{0.9, true}};
  CHECK(average_precision(half, 2) == 0.5);
  CHECK(average_precision(half, 2, Interpolation::ElevenPoint) == Approx(6.0 / 11.0));

  // Tied scores cannot be ordered by a threshold.
  const std::vector<ScoredFlag> tied{{0.5, false}, {0.5, true}};
  CHECK(average_precision(tied, 1) == 0.5);
}

TEST_CASE("AP is invariant under monotone score transforms") {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> sc(0.0, 1.0);
  std::bernoulli_distribution tp(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredFlag> a, b;
    for (int i = 0; i < 15; ++i) {
      const double s = sc(rng);
      const bool t = tp(rng);
      a.push_back({s, t});
      b.push_back({std::exp(3.0 * s) - 7.0, t});
    }
    CHECK(average_precision(a, 12) == average_precision(b, 12));
    CHECK(average_precision(a, 12, Interpolation::ElevenPoint) == average_precision(b, 12, Interpolation::ElevenPoint));
  }
}

TEST_CASE("PR curve recall never decreases") {
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<int> sc(0, 9);
  std::bernoulli_distribution tp(0.5);
  std::vector<ScoredFlag> d;
  for (int i = 0; i < 40; ++i) d.push_back({sc(rng) / 10.0, tp(rng)});
  const auto c = pr_curve(d, 30);
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    CHECK(c.points[i].recall >= c.points[i - 1].recall);
    CHECK(c.points[i].score < c.points[i - 1].score);
  }
  CHECK(c.tp + c.fp == 40);
  CHECK(c.fn == 30 - c.tp);
}

TEST_CASE("best F1 threshold") {
  const std::vector<ScoredFlag> single{{0.42, true}};
  CHECK(best_f1_threshold(pr_curve(single, 1)) == 0.42);
  CHECK_THROWS_AS(best_f1_threshold(pr_curve(std::vector<ScoredFlag>{}, 1)), std::invalid_argument);

  std::mt19937_64 rng(34);
  std::uniform_int_distribution<int> sc(0, 20);
  std::bernoulli_distribution tp(0.6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredFlag> d;
    int tps = 0;
    for (int i = 0; i < 12; ++i) {
      d.push_back({sc(rng) / 20.0, tp(rng)});
      tps += d.back().tp ? 1 : 0;
    }
    const int n_gt = tps + 2;
    // Exhaustive scan: F1 of "score >= t" for every candidate t, first maximum from the top.
    std::vector<double> cands;
    for (const auto& x : d) cands.push_back(x.score);
    std::sort(cands.rbegin(), cands.rend());
    double best = -1.0, best_t = 0.0;
    for (double t : cands) {
      int a = 0, b = 0;
      for (const auto& x : d) {
        if (x.score >= t) (x.tp ? a : b)++;
      }
      const double f1 = 2.0 * a / (a + b + n_gt);
      if (f1 > best + 1e-15) {
        best = f1;
        best_t = t;
      }
    }
    CHECK(best_f1_threshold(pr_curve(d, n_gt)) == best_t);
  }
}

TEST_CASE("semantic F1") {
  const std::vector<int> t{0, 1, 1, 2, 2, kIgnoreTarget};
  const auto perfect = f1_semantic(t, t, 3);
  CHECK(perfect.per_class == std::vector<double>{1.0, 1.0});
  CHECK(perfect.macro == 1.0);

  const std::vector<int> bg(6, 0);
  const auto none = f1_semantic(bg, t, 3);
  CHECK(none.per_class == std::vector<double>{0.0, 0.0});

  std::mt19937_64 rng(35);
  std::uniform_int_distribution<int> cls(-1, 3), pred(0, 3);
  std::vector<int> tt, pp;
  for (int i = 0; i < 500; ++i) {
    tt.push_back(cls(rng));
    pp.push_back(pred(rng));
  }
  // Confusion matrix oracle.
  std::array<std::array<double, 4>, 4> cm{};
  for (std::size_t i = 0; i < tt.size(); ++i) {
    if (tt[i] >= 0) cm[static_cast<std::size_t>(tt[i])][static_cast<std::size_t>(pp[i])] += 1.0;
  }
  const auto r = f1_semantic(pp, tt, 4);
  double macro = 0.0;
  for (std::size_t c = 1; c < 4; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      row += cm[c][k];
      col += cm[k][c];
    }
    const double precision = cm[c][c] / col, recall = cm[c][c] / row;
    const double f1 = 2.0 * precision * recall / (precision + recall);
    CHECK(r.per_class[c - 1] == Approx(f1));
    macro += f1 / 3.0;
  }
  CHECK(r.macro == Approx(macro));

  const std::vector<int> only_bg{0, 0};
  CHECK(std::isnan(f1_semantic(only_bg, only_bg, 2).per_class[0]));
}

TEST_CASE("false positive attribution") {
  std::vector<Annotation> a;
  for (int i = 0; i < 5; ++i) a.push_back(real(1, ObjectClass::Cyclist));    // 0..4
  for (int i = 0; i < 4; ++i) a.push_back(ghost(Label::MP12, 2));             // 5..8
  for (int i = 0; i < 3; ++i) a.push_back(clutter());                         // 9..11
  for (int i = 0; i < 2; ++i) a.push_back(ghost(Label::MP22, 3));             // 12, 13
  for (int i = 0; i < 2; ++i) a.push_back(ghost(Label::MP23, 4));             // 14, 15
  a.push_back({6, Label::OMP, ObjectClass::Pedestrian, 1, false});            // 16
  const auto t = frame_truth(cloud_of(a), kPedCyclReal);

  const detect::Detection mostly_mp12{{5, 6, 7, 8, 9}, 1, 0.5};
  CHECK(attribute(mostly_mp12, t, kPedCyclReal) == FpCause::MP12);
  const detect::Detection on_clutter{{9, 10, 11}, 1, 0.5};
  CHECK(attribute(on_clutter, t, kPedCyclReal) == FpCause::Background);
  const detect::Detection ped_on_cyclist{{0, 1, 2}, 1, 0.5};
  CHECK(attribute(ped_on_cyclist, t, kPedCyclReal) == FpCause::IntraClass);
  const detect::Detection cyclist_part{{0, 1, 9}, 2, 0.5};
  CHECK(attribute(cyclist_part, t, kPedCyclReal) == FpCause::Localization);
  const detect::Detection tie{{12, 13, 14, 15}, 1, 0.5};
  CHECK(attribute(tie, t, kPedCyclReal) == FpCause::MP22);
  const detect::Detection omp_tie{{16, 9}, 1, 0.5};
  CHECK(attribute(omp_tie, t, kPedCyclReal) == FpCause::OMP);

  const std::vector<FalsePositive> fps{{&mostly_mp12, &t}, {&on_clutter, &t}, {&ped_on_cyclist, &t},
                                       {&cyclist_part, &t}, {&tie, &t},      {&omp_tie, &t}};
  const auto attr = fp_attribution(fps, kPedCyclReal);
  CHECK(attr.total == 6);
  double sum = 0.0;
  for (int c = 0; c < static_cast<int>(FpCause::kCount); ++c) sum += attr.fraction(static_cast<FpCause>(c));
  CHECK(std::abs(sum - 1.0) < 1e-12);
  CHECK(attr.ghost_share() == Approx(3.0 / 6.0));
  CHECK(fp_attribution(std::vector<FalsePositive>{}, kPedCyclReal).ghost_share() == 0.0);

  CHECK(class_group(1, kPedCyclReal) == ObjectClass::Pedestrian);
  CHECK(class_group(2, kPedCyclReal) == ObjectClass::Cyclist);
  CHECK(class_group(1, kRealOnly) == ObjectClass::None);
}
