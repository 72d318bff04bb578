#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace ghostlab {

using Vec2 = Eigen::Vector2d;

/// Thrown for malformed dataset/config documents and invariant violations on read.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sensor constants of the 77 GHz reference radar. Angles in degrees, azimuth_fov is the half-angle.
struct SensorSpec {
  double carrier_frequency = 77.0;  // GHz
  double range_min = 0.15;
  double range_max = 153.0;
  double azimuth_fov = 70.0;
  double doppler_max = 44.3;
  double res_range = 0.15;
  double res_azimuth = 1.8;
  double res_doppler = 0.087;
  double cycle_time = 0.1;

  void validate() const;
  bool operator==(const SensorSpec&) const = default;
};

enum class Label : std::uint8_t { Real, MP12, MP22, MP23, OMP, Indistinguishable, Background, Ignore };
enum class ObjectClass : std::uint8_t { Pedestrian, Cyclist, Car, Truck, Motorbike, None };
enum class Split : std::uint8_t { Train, Val, Test };

std::string_view to_string(Label l);
std::string_view to_string(ObjectClass c);
std::string_view to_string(Split s);
Label label_from_string(std::string_view s);
ObjectClass object_class_from_string(std::string_view s);
Split split_from_string(std::string_view s);

inline bool is_multipath(Label l) { return l == Label::MP12 || l == Label::MP22 || l == Label::MP23; }

struct Annotation {
  int instance_id = 0;
  Label label = Label::Background;
  ObjectClass object_class = ObjectClass::None;
  std::optional<int> surface_id;
  bool sketchy = false;

  /// Empty string when consistent, otherwise a description of the violated rule.
  std::string violation() const;
  bool operator==(const Annotation&) const = default;
};

struct RadarPoint {
  double x = 0.0;
  double y = 0.0;
  double doppler = 0.0;  // positive = receding
  double amplitude = 0.0;
  std::int64_t cycle_index = 0;
  Annotation annotation;

  double range() const;
  double azimuth_deg() const;
  bool operator==(const RadarPoint&) const = default;
};

struct Frame {
  std::int64_t cycle_index = 0;
  double timestamp = 0.0;
  std::vector<RadarPoint> points;
  bool operator==(const Frame&) const = default;
};

struct WallSegment {
  int id = 0;
  Vec2 a = Vec2::Zero();
  Vec2 b = Vec2::Zero();
  bool operator==(const WallSegment& o) const { return id == o.id && a == o.a && b == o.b; }
};

struct Sequence {
  std::string scenario_id;
  Split split = Split::Train;
  SensorSpec sensor;
  std::vector<WallSegment> walls;
  std::vector<Frame> frames;
  // Set for sequences produced by overlaying several recordings.
  bool synthesized = false;
  bool operator==(const Sequence&) const = default;
};

/// Checks FoV, range, Doppler and annotation invariants of every point plus frame timing.
/// Returns one message per violation (empty when valid).
std::vector<std::string> validate(const Sequence& seq);
std::vector<std::string> validate(const Frame& frame, const SensorSpec& sensor);

// ---------------------------------------------------------------------------
// Training targets

enum class Granularity : std::uint8_t { PedCycl, Merged };
enum class LabelSet : std::uint8_t { RealOnly, DetailedMP, GhostMerged };

inline constexpr int kIgnoreTarget = -1;
inline constexpr int kBackgroundTarget = 0;

struct ClassConfig {
  Granularity granularity = Granularity::Merged;
  LabelSet labelset = LabelSet::GhostMerged;

  /// Number of foreground classes.
  int foreground_classes() const;
  /// Foreground classes plus background.
  int num_classes() const { return foreground_classes() + 1; }
  /// Index 0 is "bg"; foreground names follow the table layout, e.g. "ped", "ped-12", "cycl-ghost", "obj".
  std::vector<std::string> class_names() const;
  std::string name() const;
  bool operator==(const ClassConfig&) const = default;

  /// The six experiment configurations (granularity x labelset).
  static std::vector<ClassConfig> all();
};

std::string_view to_string(Granularity g);
std::string_view to_string(LabelSet l);
Granularity granularity_from_string(std::string_view s);
LabelSet labelset_from_string(std::string_view s);

/// Training target for an annotation: kBackgroundTarget, a foreground class index, or kIgnoreTarget.
int map_labels(const Annotation& ann, const ClassConfig& cfg);

// ---------------------------------------------------------------------------
// JSON Lines serialization: line 1 metadata, one line per frame.

inline constexpr int kDatasetFormatVersion = 1;

void write_sequence(const Sequence& seq, std::ostream& out);
void write_sequence(const Sequence& seq, const std::filesystem::path& path);
Sequence read_sequence(std::istream& in);
Sequence read_sequence(const std::filesystem::path& path);

}  // namespace ghostlab
