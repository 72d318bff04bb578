#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "ghostlab/core.hpp"
#include "ghostlab/simulate.hpp"

using namespace ghostlab;

namespace {

std::string dump(const Sequence& s) {
  std::ostringstream o;
  write_sequence(s, o);
  return o.str();
}

Sequence roundtrip(const Sequence& s) {
  std::istringstream in(dump(s));
  return read_sequence(in);
}

RadarPoint random_point(std::mt19937_64& rng, std::int64_t cycle) {
  std::uniform_real_distribution<double> r(1.0, 100.0), az(-1.2, 1.2), v(-40.0, 40.0), amp(-20.0, 80.0);
  RadarPoint p;
  const double range = r(rng), a = az(rng);
  p.x = range * std::cos(a);
  p.y = range * std::sin(a);
  p.doppler = v(rng);
  p.amplitude = amp(rng);
  p.cycle_index = cycle;
  switch (std::uniform_int_distribution<int>(0, 4)(rng)) {
    case 0: break;  // background
    case 1: p.annotation = {1, Label::Real, ObjectClass::Cyclist, std::nullopt, false}; break;
    case 2: p.annotation = {2, Label::MP12, ObjectClass::Cyclist, 3, false}; break;
    case 3: p.annotation = {4, Label::MP23, ObjectClass::Pedestrian, 1, true}; break;
    default: p.annotation = {0, Label::Ignore, ObjectClass::None, std::nullopt, false}; break;
  }
  return p;
}

}  // namespace

TEST_CASE("sensor defaults match the reference radar") {
  const SensorSpec s;
  CHECK(s.carrier_frequency == 77.0);
  CHECK(s.range_min == 0.15);
  CHECK(s.range_max == 153.0);
  CHECK(s.azimuth_fov == 70.0);
  CHECK(s.doppler_max == 44.3);
  CHECK(s.res_range == 0.15);
  CHECK(s.res_azimuth == 1.8);
  CHECK(s.res_doppler == 0.087);
  CHECK(s.cycle_time == 0.1);
  CHECK_NOTHROW(s.validate());
  SensorSpec bad;
  bad.range_min = 200.0;
  CHECK_THROWS_AS(bad.validate(), FormatError);
}

TEST_CASE("label and enum strings round-trip") {
  for (auto l : {Label::Real, Label::MP12, Label::MP22, Label::MP23, Label::OMP, Label::Indistinguishable,
                 Label::Background, Label::Ignore}) {
    CHECK(label_from_string(to_string(l)) == l);
  }
  for (auto c : {ObjectClass::Pedestrian, ObjectClass::Cyclist, ObjectClass::Car, ObjectClass::Truck,
                 ObjectClass::Motorbike, ObjectClass::None}) {
    CHECK(object_class_from_string(to_string(c)) == c);
  }
  CHECK_THROWS(label_from_string("MP33"));
}

TEST_CASE("annotation invariants") {
  CHECK(Annotation{0, Label::Background, ObjectClass::None, std::nullopt, false}.violation().empty());
  CHECK_FALSE(Annotation{3, Label::Background, ObjectClass::None, std::nullopt, false}.violation().empty());
  CHECK_FALSE(Annotation{0, Label::Ignore, ObjectClass::Pedestrian, std::nullopt, false}.violation().empty());
  CHECK_FALSE(Annotation{2, Label::MP22, ObjectClass::Pedestrian, std::nullopt, false}.violation().empty());
  CHECK(Annotation{2, Label::MP22, ObjectClass::Pedestrian, 1, false}.violation().empty());
}

TEST_CASE("validate flags points outside the sensor limits") {
  Frame f;
  f.cycle_index = 4;
  RadarPoint p;
  p.x = 10.0;
  p.cycle_index = 4;
  f.points.push_back(p);
  CHECK(validate(f, SensorSpec{}).empty());
  f.points[0].x = 200.0;
  CHECK(validate(f, SensorSpec{}).size() == 1);
  f.points[0].x = -5.0;  // behind the sensor
  CHECK_FALSE(validate(f, SensorSpec{}).empty());
  f.points[0].x = 10.0;
  f.points[0].doppler = 50.0;
  CHECK_FALSE(validate(f, SensorSpec{}).empty());
}

TEST_CASE("class configurations") {
  const auto all = ClassConfig::all();
  REQUIRE(all.size() == 6);
  const std::vector<int> expected{2, 8, 4, 1, 4, 2};
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(all[i].foreground_classes() == expected[i]);
    CHECK(all[i].class_names().size() == static_cast<std::size_t>(expected[i] + 1));
  }
  CHECK(ClassConfig{Granularity::PedCycl, LabelSet::DetailedMP}.class_names() ==
        std::vector<std::string>{"bg", "ped", "ped-12", "ped-22", "ped-23", "cycl", "cycl-12", "cycl-22", "cycl-23"});
}

TEST_CASE("map_labels examples") {
  const auto names = [](const ClassConfig& c, int idx) { return c.class_names().at(static_cast<std::size_t>(idx)); };
  const ClassConfig pc_detailed{Granularity::PedCycl, LabelSet::DetailedMP};
  CHECK(names(pc_detailed, map_labels({1, Label::Real, ObjectClass::Pedestrian, std::nullopt, false}, pc_detailed)) == "ped");
  const ClassConfig merged_ghost{Granularity::Merged, LabelSet::GhostMerged};
  CHECK(names(merged_ghost, map_labels({4, Label::MP23, ObjectClass::Cyclist, 2, false}, merged_ghost)) == "obj-ghost");
  for (const auto& cfg : ClassConfig::all()) {
    CHECK(map_labels({7, Label::OMP, ObjectClass::Pedestrian, 1, true}, cfg) == kIgnoreTarget);
    CHECK(map_labels({0, Label::Background, ObjectClass::None, std::nullopt, false}, cfg) == kBackgroundTarget);
  }
  const ClassConfig real_only{Granularity::Merged, LabelSet::RealOnly};
  CHECK(map_labels({2, Label::MP12, ObjectClass::Pedestrian, 1, false}, real_only) == kIgnoreTarget);
  CHECK(names(pc_detailed, map_labels({3, Label::MP22, ObjectClass::Cyclist, 1, false}, pc_detailed)) == "cycl-22");
}

TEST_CASE("map_labels is total and covers exactly the configured classes") {
  const std::vector<Label> labels{Label::Real, Label::MP12, Label::MP22, Label::MP23, Label::OMP,
                                  Label::Indistinguishable, Label::Background, Label::Ignore};
  for (const auto& cfg : ClassConfig::all()) {
    std::set<int> seen;
    for (auto l : labels) {
      for (auto c : {ObjectClass::Pedestrian, ObjectClass::Cyclist, ObjectClass::Car, ObjectClass::None}) {
        for (bool sketchy : {false, true}) {
          const bool bg = l == Label::Background || l == Label::Ignore;
          const Annotation a{bg ? 0 : 1, l, bg ? ObjectClass::None : c, is_multipath(l) ? std::optional<int>(1) : std::nullopt,
                             sketchy};
          const int t = map_labels(a, cfg);
          CHECK((t == kIgnoreTarget || (t >= 0 && t < cfg.num_classes())));
          if (t != kIgnoreTarget) seen.insert(t);
        }
      }
    }
    CHECK(seen.size() == static_cast<std::size_t>(cfg.num_classes()));
  }
}

TEST_CASE("serialization: empty and single-point sequences round-trip") {
  Sequence s;
  s.scenario_id = "empty";
  CHECK(roundtrip(s) == s);
  CHECK(dump(s).find('\n') == dump(s).size() - 1);

  Frame f;
  f.cycle_index = 0;
  RadarPoint p;
  p.x = 1.0;
  p.doppler = 0.5;
  f.points.push_back(p);
  s.frames.push_back(f);
  CHECK(roundtrip(s) == s);
}

TEST_CASE("serialization round-trip property over random sequences") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    Sequence s;
    s.scenario_id = "rand-" + std::to_string(trial);
    s.split = static_cast<Split>(trial % 3);
    s.synthesized = trial % 2;
    s.walls.push_back({trial, Vec2(1.0 / 3.0, 5.0), Vec2(40.0, 5.0 + 1e-7 * trial)});
    const int n_frames = std::uniform_int_distribution<int>(0, 5)(rng);
    for (int k = 0; k < n_frames; ++k) {
      Frame f;
      f.cycle_index = 100 + k;
      f.timestamp = 10.0 + 0.1 * k;
      const int n = std::uniform_int_distribution<int>(0, 40)(rng);
      for (int i = 0; i < n; ++i) f.points.push_back(random_point(rng, f.cycle_index));
      s.frames.push_back(std::move(f));
    }
    const auto back = roundtrip(s);
    CHECK(back == s);
    CHECK(dump(back) == dump(s));
  }
}

TEST_CASE("simulator output re-serializes byte-identically") {
  sim::Scenario sc;
  sc.walls = {{1, Vec2(1, 5), Vec2(60, 5)}};
  sc.waypoints = {Vec2(3, 1.5), Vec2(35, 2)};
  sc.n_frames = 300;
  sc.clutter_rate = 50;
  const auto seq = sim::generate_sequence(sc);
  const auto text = dump(seq);
  std::istringstream in(text);
  CHECK(dump(read_sequence(in)) == text);
}

TEST_CASE("read_sequence rejects bad input") {
  Sequence s;
  s.scenario_id = "x";
  Frame f;
  RadarPoint p;
  p.x = 3.0;
  f.points.push_back(p);
  s.frames.push_back(f);
  auto text = dump(s);

  {
    auto bad = text;
    bad.replace(bad.find("\"version\":1"), 11, "\"version\":7");
    std::istringstream in(bad);
    CHECK_THROWS_AS(read_sequence(in), FormatError);
  }
  {
    auto bad = text;
    bad.replace(bad.find("\"frames\":1"), 10, "\"frames\":2");
    std::istringstream in(bad);
    CHECK_THROWS_AS(read_sequence(in), FormatError);
  }
  {
    auto bad = text;
    bad.replace(bad.find("\"x\":3.0"), 7, "\"x\":-3.0");
    std::istringstream in(bad);
    CHECK_THROWS_AS(read_sequence(in), FormatError);
  }
  {
    std::istringstream in("");
    CHECK_THROWS_AS(read_sequence(in), FormatError);
  }
  {
    std::istringstream in("{not json");
    CHECK_THROWS_AS(read_sequence(in), FormatError);
  }
}
