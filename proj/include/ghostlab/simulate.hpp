#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ghostlab/core.hpp"
#include "ghostlab/geometry.hpp"

namespace ghostlab::sim {

/// One value per simulated label kind.
struct KindValues {
  double real = 0.0;
  double mp12 = 0.0;
  double mp22 = 0.0;
  double mp23 = 0.0;
  double omp = 0.0;

  double of(Label kind) const;
};

struct Scenario {
  std::string scenario_id = "corridor";
  Split split = Split::Train;
  SensorSpec sensor;
  std::vector<WallSegment> walls;

  // Out-and-back motion along the waypoint polyline at constant speed.
  std::vector<Vec2> waypoints;
  double speed = 1.5;
  double start_time = 0.0;  // phase along the out-and-back cycle, s
  ObjectClass object_class = ObjectClass::Pedestrian;

  KindValues points_per_frame{14.0, 4.0, 4.0, 3.0, 2.0};
  KindValues detection_prob{1.0, 0.7, 0.7, 0.5, 0.05};
  double spatial_sigma = 0.25;  // m
  double doppler_sigma = 0.1;   // m/s

  double clutter_rate = 780.0;  // points per frame
  double clutter_range_max = 80.0;
  double clutter_doppler_sigma = 0.1;

  // amplitude = amplitude_ref - 40 log10(r / 1 m) - bounce_loss * (order - 1) + N(0, amplitude_sigma)
  double amplitude_ref = 70.0;
  double bounce_loss = 10.0;
  double amplitude_sigma = 2.0;
  double clutter_amplitude_offset = -5.0;
  double clutter_amplitude_sigma = 5.0;

  int n_frames = 385;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& s);

/// Object state at time t (s) on the out-and-back trajectory.
geometry::MovingPoint object_state(const Scenario& s, double t);

/// Instance ids are fixed per sequence: 1 for the object, then MP12/MP22/MP23 per wall, then OMP per wall.
int instance_id_for(Label kind, std::size_t wall_index, std::size_t wall_count);

/// Independent generator for frame `index` so frames can be produced in any order.
std::mt19937_64 frame_rng(std::uint64_t seed, std::int64_t index);

Frame generate_frame(const Scenario& s, std::int64_t cycle_index, std::mt19937_64& rng);
Sequence generate_sequence(const Scenario& s);

/// Maps a sensor-frame position/velocity onto the sensor's range, azimuth and Doppler bins.
/// Returns false when the quantized detection falls outside the sensor limits.
bool quantize(const SensorSpec& sensor, double& x, double& y, double& doppler);

// ---------------------------------------------------------------------------
// Overlay synthesis

class OverlayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OverlayOptions {
  double min_separation = 1.0;  // m between instance centroids of different sources
  int out_len = 10;             // frames
};

/// Per-frame union of the sources shifted by `offsets` (output frame f reads source frame f + offset).
/// Instance ids are remapped to be unique across sources.
Sequence overlay_sequences(std::span<const Sequence* const> seqs, std::span<const int> offsets,
                           const OverlayOptions& opt);

/// Draws random offsets until the overlay passes the separation check.
Sequence overlay_random(std::span<const Sequence* const> seqs, const OverlayOptions& opt, std::mt19937_64& rng,
                        int max_attempts = 200, std::vector<int>* chosen_offsets = nullptr);

}  // namespace ghostlab::sim
