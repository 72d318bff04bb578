#include "ghostlab/core.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ghostlab {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 8> kLabelNames = {
    "REAL", "MP12", "MP22", "MP23", "OMP", "INDISTINGUISHABLE", "BACKGROUND", "IGNORE"};
constexpr std::array<std::string_view, 6> kClassNames = {
    "PEDESTRIAN", "CYCLIST", "CAR", "TRUCK", "MOTORBIKE", "NONE"};
constexpr std::array<std::string_view, 3> kSplitNames = {"TRAIN", "VAL", "TEST"};
constexpr std::array<std::string_view, 2> kGranularityNames = {"PED_CYCL", "MERGED"};
constexpr std::array<std::string_view, 3> kLabelSetNames = {"REAL_ONLY", "DETAILED_MP", "GHOST_MERGED"};

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  throw FormatError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

// Tolerance for bin-quantized values that sit exactly on a limit.
constexpr double kLimitSlack = 1e-9;

}  // namespace

std::string_view to_string(Label l) { return kLabelNames.at(static_cast<std::size_t>(l)); }
std::string_view to_string(ObjectClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }
std::string_view to_string(Split s) { return kSplitNames.at(static_cast<std::size_t>(s)); }
std::string_view to_string(Granularity g) { return kGranularityNames.at(static_cast<std::size_t>(g)); }
std::string_view to_string(LabelSet l) { return kLabelSetNames.at(static_cast<std::size_t>(l)); }

Label label_from_string(std::string_view s) { return parse_enum<Label>(s, kLabelNames, "label"); }
ObjectClass object_class_from_string(std::string_view s) {
  return parse_enum<ObjectClass>(s, kClassNames, "object class");
}
Split split_from_string(std::string_view s) { return parse_enum<Split>(s, kSplitNames, "split"); }
Granularity granularity_from_string(std::string_view s) {
  return parse_enum<Granularity>(s, kGranularityNames, "granularity");
}
LabelSet labelset_from_string(std::string_view s) {
  return parse_enum<LabelSet>(s, kLabelSetNames, "labelset");
}

void SensorSpec::validate() const {
  if (!(res_range > 0 && res_azimuth > 0 && res_doppler > 0 && cycle_time > 0)) {
    throw FormatError("sensor resolutions and cycle time must be positive");
  }
  if (!(range_min < range_max)) throw FormatError("sensor range_min must be below range_max");
  if (!(azimuth_fov > 0 && doppler_max > 0)) throw FormatError("sensor azimuth_fov and doppler_max must be positive");
}

std::string Annotation::violation() const {
  if (label == Label::Background || label == Label::Ignore) {
    if (instance_id != 0) return "background/ignore point with nonzero instance_id";
    if (object_class != ObjectClass::None) return "background/ignore point with an object class";
  }
  if (is_multipath(label) && !surface_id) return "multi-path label without surface_id";
  if (instance_id < 0) return "negative instance_id";
  return {};
}

double RadarPoint::range() const { return std::hypot(x, y); }
double RadarPoint::azimuth_deg() const { return std::atan2(y, x) * kRadToDeg; }

std::vector<std::string> validate(const Frame& frame, const SensorSpec& sensor) {
  std::vector<std::string> errors;
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const auto& p = frame.points[i];
    auto fail = [&](const std::string& what) {
      errors.push_back("cycle " + std::to_string(frame.cycle_index) + " point " + std::to_string(i) + ": " + what);
    };
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.doppler) || !std::isfinite(p.amplitude)) {
      fail("non-finite value");
      continue;
    }
    const double r = p.range();
    if (r < sensor.range_min - kLimitSlack || r > sensor.range_max + kLimitSlack) fail("range outside sensor limits");
    if (std::abs(p.azimuth_deg()) > sensor.azimuth_fov + kLimitSlack) fail("azimuth outside field of view");
    if (std::abs(p.doppler) > sensor.doppler_max + kLimitSlack) fail("doppler outside sensor limits");
    if (p.cycle_index != frame.cycle_index) fail("point cycle differs from frame cycle");
    if (auto v = p.annotation.violation(); !v.empty()) fail(v);
  }
  return errors;
}

std::vector<std::string> validate(const Sequence& seq) {
  std::vector<std::string> errors;
  try {
    seq.sensor.validate();
  } catch (const FormatError& e) {
    errors.emplace_back(e.what());
    return errors;
  }
  for (const auto& w : seq.walls) {
    if ((w.a - w.b).norm() <= 0.0) errors.push_back("wall " + std::to_string(w.id) + " has zero length");
  }
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& frame = seq.frames[f];
    if (f > 0) {
      const auto& prev = seq.frames[f - 1];
      if (frame.cycle_index != prev.cycle_index + 1) errors.push_back("non-consecutive cycle index at frame " + std::to_string(f));
      if (std::abs(frame.timestamp - prev.timestamp - seq.sensor.cycle_time) > 1e-6) {
        errors.push_back("timestamp step differs from cycle_time at frame " + std::to_string(f));
      }
    }
    auto fe = validate(frame, seq.sensor);
    errors.insert(errors.end(), fe.begin(), fe.end());
  }
  return errors;
}

// ---------------------------------------------------------------------------

int ClassConfig::foreground_classes() const {
  const int groups = granularity == Granularity::PedCycl ? 2 : 1;
  int per_group = 1;
  if (labelset == LabelSet::DetailedMP) per_group = 4;
  if (labelset == LabelSet::GhostMerged) per_group = 2;
  return groups * per_group;
}

std::vector<std::string> ClassConfig::class_names() const {
  std::vector<std::string> names{"bg"};
  const std::vector<std::string> groups =
      granularity == Granularity::PedCycl ? std::vector<std::string>{"ped", "cycl"} : std::vector<std::string>{"obj"};
  for (const auto& g : groups) {
    names.push_back(g);
    if (labelset == LabelSet::DetailedMP) {
      names.push_back(g + "-12");
      names.push_back(g + "-22");
      names.push_back(g + "-23");
    } else if (labelset == LabelSet::GhostMerged) {
      names.push_back(g + "-ghost");
    }
  }
  return names;
}

std::string ClassConfig::name() const {
  return std::string(to_string(granularity)) + "/" + std::string(to_string(labelset));
}

std::vector<ClassConfig> ClassConfig::all() {
  std::vector<ClassConfig> out;
  for (auto g : {Granularity::PedCycl, Granularity::Merged}) {
    for (auto l : {LabelSet::RealOnly, LabelSet::DetailedMP, LabelSet::GhostMerged}) out.push_back({g, l});
  }
  return out;
}

int map_labels(const Annotation& ann, const ClassConfig& cfg) {
  if (ann.sketchy || ann.label == Label::Ignore) return kIgnoreTarget;
  if (ann.label == Label::Background) return kBackgroundTarget;
  if (ann.label == Label::OMP || ann.label == Label::Indistinguishable) return kIgnoreTarget;

  int group = 0;
  switch (ann.object_class) {
    case ObjectClass::Pedestrian: group = 0; break;
    case ObjectClass::Cyclist: group = cfg.granularity == Granularity::PedCycl ? 1 : 0; break;
    default: return kIgnoreTarget;  // only vulnerable road users are trained classes
  }

  int offset = 0;
  if (ann.label != Label::Real) {
    switch (cfg.labelset) {
      case LabelSet::RealOnly: return kIgnoreTarget;
      case LabelSet::DetailedMP: offset = ann.label == Label::MP12 ? 1 : ann.label == Label::MP22 ? 2 : 3; break;
      case LabelSet::GhostMerged: offset = 1; break;
    }
  }
  const int per_group = cfg.foreground_classes() / (cfg.granularity == Granularity::PedCycl ? 2 : 1);
  return 1 + group * per_group + offset;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json sensor_to_json(const SensorSpec& s) {
  return json{{"carrier_frequency", s.carrier_frequency}, {"range_min", s.range_min},
              {"range_max", s.range_max},                 {"azimuth_fov", s.azimuth_fov},
              {"doppler_max", s.doppler_max},             {"res_range", s.res_range},
              {"res_azimuth", s.res_azimuth},             {"res_doppler", s.res_doppler},
              {"cycle_time", s.cycle_time}};
}

SensorSpec sensor_from_json(const json& j) {
  SensorSpec s;
  s.carrier_frequency = j.at("carrier_frequency").get<double>();
  s.range_min = j.at("range_min").get<double>();
  s.range_max = j.at("range_max").get<double>();
  s.azimuth_fov = j.at("azimuth_fov").get<double>();
  s.doppler_max = j.at("doppler_max").get<double>();
  s.res_range = j.at("res_range").get<double>();
  s.res_azimuth = j.at("res_azimuth").get<double>();
  s.res_doppler = j.at("res_doppler").get<double>();
  s.cycle_time = j.at("cycle_time").get<double>();
  return s;
}

json point_to_json(const RadarPoint& p) {
  const auto& a = p.annotation;
  return json{{"x", p.x},
              {"y", p.y},
              {"doppler", p.doppler},
              {"amplitude", p.amplitude},
              {"cycle", p.cycle_index},
              {"instance_id", a.instance_id},
              {"label", to_string(a.label)},
              {"class", to_string(a.object_class)},
              {"surface_id", a.surface_id ? json(*a.surface_id) : json(nullptr)},
              {"sketchy", a.sketchy}};
}

RadarPoint point_from_json(const json& j) {
  RadarPoint p;
  p.x = j.at("x").get<double>();
  p.y = j.at("y").get<double>();
  p.doppler = j.at("doppler").get<double>();
  p.amplitude = j.at("amplitude").get<double>();
  p.cycle_index = j.at("cycle").get<std::int64_t>();
  auto& a = p.annotation;
  a.instance_id = j.at("instance_id").get<int>();
  a.label = label_from_string(j.at("label").get<std::string>());
  a.object_class = object_class_from_string(j.at("class").get<std::string>());
  if (const auto& s = j.at("surface_id"); !s.is_null()) a.surface_id = s.get<int>();
  a.sketchy = j.at("sketchy").get<bool>();
  return p;
}

}  // namespace

void write_sequence(const Sequence& seq, std::ostream& out) {
  json walls = json::array();
  for (const auto& w : seq.walls) {
    walls.push_back({{"id", w.id}, {"ax", w.a.x()}, {"ay", w.a.y()}, {"bx", w.b.x()}, {"by", w.b.y()}});
  }
  const json meta{{"format", "ghostlab-sequence"},
                  {"version", kDatasetFormatVersion},
                  {"scenario_id", seq.scenario_id},
                  {"split", to_string(seq.split)},
                  {"synthesized", seq.synthesized},
                  {"sensor", sensor_to_json(seq.sensor)},
                  {"walls", walls},
                  {"frames", seq.frames.size()}};
  out << meta.dump() << '\n';
  for (const auto& f : seq.frames) {
    json pts = json::array();
    for (const auto& p : f.points) pts.push_back(point_to_json(p));
    out << json{{"cycle", f.cycle_index}, {"timestamp", f.timestamp}, {"points", std::move(pts)}}.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing sequence");
}

void write_sequence(const Sequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_sequence(seq, out);
}

Sequence read_sequence(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty dataset file");
  Sequence seq;
  std::size_t expected_frames = 0;
  try {
    const json meta = json::parse(line);
    if (meta.at("format").get<std::string>() != "ghostlab-sequence") throw FormatError("not a sequence file");
    const int version = meta.at("version").get<int>();
    if (version != kDatasetFormatVersion) {
      throw FormatError("schema version " + std::to_string(version) + " not supported (expected " +
                        std::to_string(kDatasetFormatVersion) + ")");
    }
    seq.scenario_id = meta.at("scenario_id").get<std::string>();
    seq.split = split_from_string(meta.at("split").get<std::string>());
    seq.synthesized = meta.value("synthesized", false);
    seq.sensor = sensor_from_json(meta.at("sensor"));
    for (const auto& w : meta.at("walls")) {
      seq.walls.push_back({w.at("id").get<int>(), Vec2(w.at("ax").get<double>(), w.at("ay").get<double>()),
                           Vec2(w.at("bx").get<double>(), w.at("by").get<double>())});
    }
    expected_frames = meta.at("frames").get<std::size_t>();

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json jf = json::parse(line);
      Frame f;
      f.cycle_index = jf.at("cycle").get<std::int64_t>();
      f.timestamp = jf.at("timestamp").get<double>();
      const auto& pts = jf.at("points");
      f.points.reserve(pts.size());
      for (const auto& jp : pts) f.points.push_back(point_from_json(jp));
      seq.frames.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset: ") + e.what());
  }
  if (seq.frames.size() != expected_frames) {
    throw FormatError("header announces " + std::to_string(expected_frames) + " frames, found " +
                      std::to_string(seq.frames.size()));
  }
  if (auto errors = validate(seq); !errors.empty()) {
    throw FormatError("invariant violation: " + errors.front() +
                      (errors.size() > 1 ? " (+" + std::to_string(errors.size() - 1) + " more)" : ""));
  }
  return seq;
}

Sequence read_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_sequence(in);
}

}  // namespace ghostlab
