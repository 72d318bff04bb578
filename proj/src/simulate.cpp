#include "ghostlab/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <nlohmann/json.hpp>

namespace ghostlab::sim {

using nlohmann::json;

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int bounce_order(Label kind) {
  switch (kind) {
    case Label::Real: return 1;
    case Label::MP12:
    case Label::MP22: return 2;
    case Label::MP23: return 3;
    default: return 4;
  }
}

// Zero-width distributions are allowed in scenarios (noise-free runs).
double gauss(double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

double amplitude(const Scenario& s, double range, int order, std::mt19937_64& rng) {
  return s.amplitude_ref - 40.0 * std::log10(std::max(range, 1e-3)) - s.bounce_loss * (order - 1) +
         gauss(s.amplitude_sigma, rng);
}

int poisson(double mean, std::mt19937_64& rng) {
  if (mean <= 0.0) return 0;
  std::poisson_distribution<int> d(mean);
  return d(rng);
}

bool bernoulli(double p, std::mt19937_64& rng) {
  if (p >= 1.0) return true;
  if (p <= 0.0) return false;
  std::bernoulli_distribution d(p);
  return d(rng);
}

bool in_field_of_view(const SensorSpec& sensor, const Vec2& p) {
  const double r = p.norm();
  const double az = std::atan2(p.y(), p.x()) / kDegToRad;
  return r >= sensor.range_min && r <= sensor.range_max && std::abs(az) <= sensor.azimuth_fov;
}

// Scatters a cluster of points around `center` with Doppler `doppler`.
void emit_cluster(const Scenario& s, const Vec2& center, double doppler, Label kind, int instance_id,
                  std::optional<int> surface_id, double mean_points, std::int64_t cycle, std::mt19937_64& rng,
                  std::vector<RadarPoint>& out) {
  const int n = poisson(mean_points, rng);
  for (int i = 0; i < n; ++i) {
    double x = center.x() + gauss(s.spatial_sigma, rng);
    double y = center.y() + gauss(s.spatial_sigma, rng);
    double v = doppler + gauss(s.doppler_sigma, rng);
    const double amp = amplitude(s, std::hypot(x, y), bounce_order(kind), rng);
    if (!quantize(s.sensor, x, y, v)) continue;
    RadarPoint p;
    p.x = x;
    p.y = y;
    p.doppler = v;
    p.amplitude = amp;
    p.cycle_index = cycle;
    p.annotation = {instance_id, kind, s.object_class, surface_id, false};
    out.push_back(p);
  }
}

}  // namespace

double KindValues::of(Label kind) const {
  switch (kind) {
    case Label::Real: return real;
    case Label::MP12: return mp12;
    case Label::MP22: return mp22;
    case Label::MP23: return mp23;
    case Label::OMP: return omp;
    default: return 0.0;
  }
}

void Scenario::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("scenario." + field + ": " + why);
  };
  try {
    sensor.validate();
  } catch (const FormatError& e) {
    fail("sensor", e.what());
  }
  if (waypoints.empty()) fail("waypoints", "at least one waypoint required");
  for (const auto& w : waypoints) {
    if (!w.allFinite()) fail("waypoints", "non-finite coordinate");
  }
  if (!(speed >= 0.0) || !std::isfinite(speed)) fail("speed", "must be finite and non-negative");
  const auto check_prob = [&](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) fail(std::string("detection_prob.") + name, "must lie in [0,1]");
  };
  check_prob(detection_prob.real, "real");
  check_prob(detection_prob.mp12, "mp12");
  check_prob(detection_prob.mp22, "mp22");
  check_prob(detection_prob.mp23, "mp23");
  check_prob(detection_prob.omp, "omp");
  for (double m : {points_per_frame.real, points_per_frame.mp12, points_per_frame.mp22, points_per_frame.mp23,
                   points_per_frame.omp}) {
    if (!(m >= 0.0)) fail("points_per_frame", "means must be non-negative");
  }
  if (!(spatial_sigma >= 0.0)) fail("spatial_sigma", "must be non-negative");
  if (!(doppler_sigma >= 0.0)) fail("doppler_sigma", "must be non-negative");
  if (!(clutter_rate >= 0.0)) fail("clutter_rate", "must be non-negative");
  if (!(clutter_range_max > sensor.range_min)) fail("clutter_range_max", "must exceed sensor range_min");
  if (!(amplitude_sigma >= 0.0) || !(clutter_amplitude_sigma >= 0.0)) fail("amplitude_sigma", "must be non-negative");
  if (n_frames < 0) fail("n_frames", "must be non-negative");
  if (object_class != ObjectClass::Pedestrian && object_class != ObjectClass::Cyclist) {
    fail("object_class", "main object must be PEDESTRIAN or CYCLIST");
  }
  for (const auto& w : walls) {
    if ((w.a - w.b).norm() <= 0.0) fail("walls", "wall " + std::to_string(w.id) + " has zero length");
  }
}

Scenario scenario_from_json(const json& j) {
  Scenario s;
  try {
    s.scenario_id = j.value("scenario_id", s.scenario_id);
    if (j.contains("split")) s.split = split_from_string(j.at("split").get<std::string>());
    if (j.contains("sensor")) {
      const auto& js = j.at("sensor");
      s.sensor.carrier_frequency = js.value("carrier_frequency", s.sensor.carrier_frequency);
      s.sensor.range_min = js.value("range_min", s.sensor.range_min);
      s.sensor.range_max = js.value("range_max", s.sensor.range_max);
      s.sensor.azimuth_fov = js.value("azimuth_fov", s.sensor.azimuth_fov);
      s.sensor.doppler_max = js.value("doppler_max", s.sensor.doppler_max);
      s.sensor.res_range = js.value("res_range", s.sensor.res_range);
      s.sensor.res_azimuth = js.value("res_azimuth", s.sensor.res_azimuth);
      s.sensor.res_doppler = js.value("res_doppler", s.sensor.res_doppler);
      s.sensor.cycle_time = js.value("cycle_time", s.sensor.cycle_time);
    }
    if (j.contains("walls")) {
      s.walls.clear();
      for (const auto& w : j.at("walls")) {
        const auto a = w.at("a").get<std::vector<double>>();
        const auto b = w.at("b").get<std::vector<double>>();
        if (a.size() != 2 || b.size() != 2) throw std::invalid_argument("scenario.walls: endpoints need 2 coordinates");
        s.walls.push_back({w.at("id").get<int>(), Vec2(a[0], a[1]), Vec2(b[0], b[1])});
      }
    }
    if (j.contains("waypoints")) {
      s.waypoints.clear();
      for (const auto& w : j.at("waypoints")) {
        const auto p = w.get<std::vector<double>>();
        if (p.size() != 2) throw std::invalid_argument("scenario.waypoints: points need 2 coordinates");
        s.waypoints.emplace_back(p[0], p[1]);
      }
    }
    s.speed = j.value("speed", s.speed);
    s.start_time = j.value("start_time", s.start_time);
    if (j.contains("object_class")) s.object_class = object_class_from_string(j.at("object_class").get<std::string>());
    auto read_kinds = [&](const char* key, KindValues& kv) {
      if (!j.contains(key)) return;
      const auto& jk = j.at(key);
      kv.real = jk.value("REAL", kv.real);
      kv.mp12 = jk.value("MP12", kv.mp12);
      kv.mp22 = jk.value("MP22", kv.mp22);
      kv.mp23 = jk.value("MP23", kv.mp23);
      kv.omp = jk.value("OMP", kv.omp);
    };
    read_kinds("points_per_frame", s.points_per_frame);
    read_kinds("detection_prob", s.detection_prob);
    s.spatial_sigma = j.value("spatial_sigma", s.spatial_sigma);
    s.doppler_sigma = j.value("doppler_sigma", s.doppler_sigma);
    s.clutter_rate = j.value("clutter_rate", s.clutter_rate);
    s.clutter_range_max = j.value("clutter_range_max", s.clutter_range_max);
    s.clutter_doppler_sigma = j.value("clutter_doppler_sigma", s.clutter_doppler_sigma);
    s.amplitude_ref = j.value("amplitude_ref", s.amplitude_ref);
    s.bounce_loss = j.value("bounce_loss", s.bounce_loss);
    s.amplitude_sigma = j.value("amplitude_sigma", s.amplitude_sigma);
    s.clutter_amplitude_offset = j.value("clutter_amplitude_offset", s.clutter_amplitude_offset);
    s.clutter_amplitude_sigma = j.value("clutter_amplitude_sigma", s.clutter_amplitude_sigma);
    s.n_frames = j.value("n_frames", s.n_frames);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario: ") + e.what());
  } catch (const FormatError& e) {
    throw std::invalid_argument(std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

json scenario_to_json(const Scenario& s) {
  json walls = json::array();
  for (const auto& w : s.walls) {
    walls.push_back({{"id", w.id}, {"a", {w.a.x(), w.a.y()}}, {"b", {w.b.x(), w.b.y()}}});
  }
  json wps = json::array();
  for (const auto& w : s.waypoints) wps.push_back({w.x(), w.y()});
  auto kinds = [](const KindValues& k) {
    return json{{"REAL", k.real}, {"MP12", k.mp12}, {"MP22", k.mp22}, {"MP23", k.mp23}, {"OMP", k.omp}};
  };
  const auto& ss = s.sensor;
  return json{{"scenario_id", s.scenario_id},
              {"split", to_string(s.split)},
              {"sensor",
               {{"carrier_frequency", ss.carrier_frequency},
                {"range_min", ss.range_min},
                {"range_max", ss.range_max},
                {"azimuth_fov", ss.azimuth_fov},
                {"doppler_max", ss.doppler_max},
                {"res_range", ss.res_range},
                {"res_azimuth", ss.res_azimuth},
                {"res_doppler", ss.res_doppler},
                {"cycle_time", ss.cycle_time}}},
              {"walls", walls},
              {"waypoints", wps},
              {"speed", s.speed},
              {"start_time", s.start_time},
              {"object_class", to_string(s.object_class)},
              {"points_per_frame", kinds(s.points_per_frame)},
              {"detection_prob", kinds(s.detection_prob)},
              {"spatial_sigma", s.spatial_sigma},
              {"doppler_sigma", s.doppler_sigma},
              {"clutter_rate", s.clutter_rate},
              {"clutter_range_max", s.clutter_range_max},
              {"clutter_doppler_sigma", s.clutter_doppler_sigma},
              {"amplitude_ref", s.amplitude_ref},
              {"bounce_loss", s.bounce_loss},
              {"amplitude_sigma", s.amplitude_sigma},
              {"clutter_amplitude_offset", s.clutter_amplitude_offset},
              {"clutter_amplitude_sigma", s.clutter_amplitude_sigma},
              {"n_frames", s.n_frames},
              {"seed", s.seed}};
}

geometry::MovingPoint object_state(const Scenario& s, double t) {
  geometry::MovingPoint m;
  m.pos = s.waypoints.front();
  if (s.waypoints.size() < 2 || s.speed == 0.0) return m;

  double total = 0.0;
  for (std::size_t i = 1; i < s.waypoints.size(); ++i) total += (s.waypoints[i] - s.waypoints[i - 1]).norm();
  if (total <= 0.0) return m;

  double arc = std::fmod(s.speed * (t + s.start_time), 2.0 * total);
  if (arc < 0.0) arc += 2.0 * total;
  double direction = 1.0;
  if (arc > total) {
    arc = 2.0 * total - arc;
    direction = -1.0;
  }
  for (std::size_t i = 1; i < s.waypoints.size(); ++i) {
    const Vec2 seg = s.waypoints[i] - s.waypoints[i - 1];
    const double len = seg.norm();
    if (len <= 0.0) continue;
    if (arc <= len || i + 1 == s.waypoints.size()) {
      const Vec2 u = seg / len;
      m.pos = s.waypoints[i - 1] + std::min(arc, len) * u;
      m.vel = direction * s.speed * u;
      return m;
    }
    arc -= len;
  }
  return m;
}

int instance_id_for(Label kind, std::size_t wall_index, std::size_t wall_count) {
  const int w = static_cast<int>(wall_index);
  switch (kind) {
    case Label::Real: return 1;
    case Label::MP12: return 2 + 3 * w;
    case Label::MP22: return 3 + 3 * w;
    case Label::MP23: return 4 + 3 * w;
    case Label::OMP: return 2 + 3 * static_cast<int>(wall_count) + w;
    default: return 0;
  }
}

std::mt19937_64 frame_rng(std::uint64_t seed, std::int64_t index) {
  const std::uint64_t mixed = splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(index));
  std::seed_seq seq{static_cast<std::uint32_t>(mixed), static_cast<std::uint32_t>(mixed >> 32)};
  return std::mt19937_64(seq);
}

bool quantize(const SensorSpec& sensor, double& x, double& y, double& doppler) {
  const double r = std::round(std::hypot(x, y) / sensor.res_range) * sensor.res_range;
  const double az = std::round(std::atan2(y, x) / kDegToRad / sensor.res_azimuth) * sensor.res_azimuth;
  const double v = std::round(doppler / sensor.res_doppler) * sensor.res_doppler;
  if (r < sensor.range_min || r > sensor.range_max) return false;
  if (std::abs(az) > sensor.azimuth_fov || std::abs(v) > sensor.doppler_max) return false;
  x = r * std::cos(az * kDegToRad);
  y = r * std::sin(az * kDegToRad);
  doppler = v;
  return true;
}

Frame generate_frame(const Scenario& s, std::int64_t cycle_index, std::mt19937_64& rng) {
  Frame frame;
  frame.cycle_index = cycle_index;
  frame.timestamp = static_cast<double>(cycle_index) * s.sensor.cycle_time;
  const Vec2 sensor_pos = Vec2::Zero();
  const auto obj = object_state(s, frame.timestamp);

  if (in_field_of_view(s.sensor, obj.pos)) {
    const auto real = geometry::real_detection(sensor_pos, obj);
    if (bernoulli(s.detection_prob.real, rng)) {
      emit_cluster(s, obj.pos, real.doppler, Label::Real, instance_id_for(Label::Real, 0, s.walls.size()), std::nullopt,
                   s.points_per_frame.real, cycle_index, rng, frame.points);
    }
    for (std::size_t w = 0; w < s.walls.size(); ++w) {
      const auto& wall = s.walls[w];
      std::array<geometry::GhostPrediction, 3> ghosts;
      try {
        ghosts = geometry::ghost_detections(sensor_pos, obj, wall);
      } catch (const geometry::NoSpecularPath&) {
        continue;  // object behind or on this wall
      }
      if (!ghosts[0].valid) continue;
      for (const auto& g : ghosts) {
        if (!bernoulli(s.detection_prob.of(g.kind), rng)) continue;
        emit_cluster(s, g.pos, g.doppler, g.kind, instance_id_for(g.kind, w, s.walls.size()), wall.id,
                     s.points_per_frame.of(g.kind), cycle_index, rng, frame.points);
      }
      // Higher-order returns: sparse points further out along the mirrored bearing.
      if (bernoulli(s.detection_prob.omp, rng)) {
        const auto& mp23 = ghosts[2];
        const int n = poisson(s.points_per_frame.omp, rng);
        std::uniform_real_distribution<double> extra(1.0, 0.6 * mp23.range + 1.0);
        std::normal_distribution<double> spread(0.0, 2.0 * kDegToRad);
        std::uniform_real_distribution<double> dscale(0.8, 1.2);
        for (int i = 0; i < n; ++i) {
          const double r = mp23.range + extra(rng);
          const double b = mp23.bearing + spread(rng);
          double x = r * std::cos(b);
          double y = r * std::sin(b);
          double v = mp23.doppler * dscale(rng);
          const double amp = amplitude(s, r, bounce_order(Label::OMP), rng);
          if (!quantize(s.sensor, x, y, v)) continue;
          RadarPoint p;
          p.x = x;
          p.y = y;
          p.doppler = v;
          p.amplitude = amp;
          p.cycle_index = cycle_index;
          p.annotation = {instance_id_for(Label::OMP, w, s.walls.size()), Label::OMP, s.object_class, wall.id, false};
          frame.points.push_back(p);
        }
      }
    }
  }

  // Static clutter, uniform in range and azimuth.
  const int n_clutter = poisson(s.clutter_rate, rng);
  std::uniform_real_distribution<double> ur(s.sensor.range_min, std::min(s.clutter_range_max, s.sensor.range_max));
  std::uniform_real_distribution<double> ua(-s.sensor.azimuth_fov * kDegToRad, s.sensor.azimuth_fov * kDegToRad);
  for (int i = 0; i < n_clutter; ++i) {
    const double r = ur(rng);
    const double a = ua(rng);
    double x = r * std::cos(a);
    double y = r * std::sin(a);
    double v = gauss(s.clutter_doppler_sigma, rng);
    const double amp = s.amplitude_ref - 40.0 * std::log10(r) + s.clutter_amplitude_offset + gauss(s.clutter_amplitude_sigma, rng);
    if (!quantize(s.sensor, x, y, v)) continue;
    RadarPoint p;
    p.x = x;
    p.y = y;
    p.doppler = v;
    p.amplitude = amp;
    p.cycle_index = cycle_index;
    frame.points.push_back(p);
  }
  return frame;
}

Sequence generate_sequence(const Scenario& s) {
  s.validate();
  Sequence seq;
  seq.scenario_id = s.scenario_id;
  seq.split = s.split;
  seq.sensor = s.sensor;
  seq.walls = s.walls;
  seq.frames.reserve(static_cast<std::size_t>(s.n_frames));
  for (int i = 0; i < s.n_frames; ++i) {
    auto rng = frame_rng(s.seed, i);
    seq.frames.push_back(generate_frame(s, i, rng));
  }
  return seq;
}

// ---------------------------------------------------------------------------

namespace {

using Centroids = std::map<int, Vec2>;

Centroids instance_centroids(const Frame& f) {
  std::map<int, std::pair<Vec2, int>> acc;
  for (const auto& p : f.points) {
    if (p.annotation.instance_id == 0) continue;
    auto& [sum, n] = acc.try_emplace(p.annotation.instance_id, Vec2::Zero(), 0).first->second;
    sum += Vec2(p.x, p.y);
    ++n;
  }
  Centroids out;
  for (const auto& [id, sn] : acc) out.emplace(id, sn.first / sn.second);
  return out;
}

}  // namespace

Sequence overlay_sequences(std::span<const Sequence* const> seqs, std::span<const int> offsets,
                           const OverlayOptions& opt) {
  if (seqs.size() < 2 || seqs.size() > 5) throw OverlayError("overlay needs between two and five sequences");
  if (offsets.size() != seqs.size()) throw OverlayError("one frame offset per sequence required");
  if (opt.out_len < 10) throw OverlayError("overlaid sequences need at least ten frames");
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    if (seqs[k]->scenario_id != seqs[0]->scenario_id) {
      throw OverlayError("scenario mismatch: '" + seqs[k]->scenario_id + "' vs '" + seqs[0]->scenario_id + "'");
    }
    if (offsets[k] < 0) throw OverlayError("negative frame offset");
    const auto available = static_cast<long>(seqs[k]->frames.size()) - offsets[k];
    if (available < opt.out_len) {
      throw OverlayError("out_len " + std::to_string(opt.out_len) + " exceeds available overlap of source " +
                         std::to_string(k) + " (" + std::to_string(std::max(0L, available)) + " frames)");
    }
  }

  int max_id = 0;
  for (const auto* s : seqs) {
    for (const auto& f : s->frames) {
      for (const auto& p : f.points) max_id = std::max(max_id, p.annotation.instance_id);
    }
  }
  const int stride = max_id + 1;

  Sequence out;
  out.scenario_id = seqs[0]->scenario_id;
  out.split = seqs[0]->split;
  out.sensor = seqs[0]->sensor;
  out.walls = seqs[0]->walls;
  out.synthesized = true;
  out.frames.resize(static_cast<std::size_t>(opt.out_len));

  for (int f = 0; f < opt.out_len; ++f) {
    std::vector<Centroids> cents;
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      cents.push_back(instance_centroids(seqs[k]->frames[static_cast<std::size_t>(f + offsets[k])]));
    }
    for (std::size_t k1 = 0; k1 < seqs.size(); ++k1) {
      for (std::size_t k2 = k1 + 1; k2 < seqs.size(); ++k2) {
        for (const auto& [id1, c1] : cents[k1]) {
          for (const auto& [id2, c2] : cents[k2]) {
            if ((c1 - c2).norm() < opt.min_separation) {
              throw OverlayError("overlap at frame " + std::to_string(f) + ": source " + std::to_string(k1) +
                                 " instance " + std::to_string(id1) + " and source " + std::to_string(k2) +
                                 " instance " + std::to_string(id2) + " are " + std::to_string((c1 - c2).norm()) +
                                 " m apart");
            }
          }
        }
      }
    }

    auto& frame = out.frames[static_cast<std::size_t>(f)];
    frame.cycle_index = f;
    frame.timestamp = f * out.sensor.cycle_time;
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      for (auto p : seqs[k]->frames[static_cast<std::size_t>(f + offsets[k])].points) {
        p.cycle_index = f;
        if (p.annotation.instance_id != 0) p.annotation.instance_id += static_cast<int>(k) * stride;
        frame.points.push_back(p);
      }
    }
  }
  return out;
}

Sequence overlay_random(std::span<const Sequence* const> seqs, const OverlayOptions& opt, std::mt19937_64& rng,
                        int max_attempts, std::vector<int>* chosen_offsets) {
  std::vector<int> offsets(seqs.size());
  std::string last_error = "no attempts made";
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      const int span = static_cast<int>(seqs[k]->frames.size()) - opt.out_len;
      if (span < 0) throw OverlayError("source " + std::to_string(k) + " shorter than out_len");
      offsets[k] = std::uniform_int_distribution<int>(0, span)(rng);
    }
    try {
      auto out = overlay_sequences(seqs, offsets, opt);
      if (chosen_offsets) *chosen_offsets = offsets;
      return out;
    } catch (const OverlayError& e) {
      last_error = e.what();
    }
  }
  throw OverlayError("no valid overlay after " + std::to_string(max_attempts) + " attempts; last: " + last_error);
}

}  // namespace ghostlab::sim
