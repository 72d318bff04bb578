#pragma once

#include <array>
#include <optional>
#include <stdexcept>

#include "ghostlab/core.hpp"

// Specular multi-path geometry for a point object next to a single flat wall.
//
// Notation used below: S sensor, O object, S' and O' their mirror images across
// the wall line, P the specular point on the wall. Paths:
//   direct  S -> O -> S
//   MP12    S -> P -> O -> S   (type-1, last bounce on the object; also the reverse
//                               S -> O -> P -> S, which is MP22)
//   MP22    S -> O -> P -> S   (type-2, last bounce on the wall)
//   MP23    S -> P -> O -> P -> S
namespace ghostlab::geometry {

/// Raised when no specular path exists (points on opposite sides of, or on, the wall line).
class NoSpecularPath : public std::domain_error {
 public:
  NoSpecularPath() : std::domain_error("no specular path") {}
};

class DegenerateWall : public std::invalid_argument {
 public:
  DegenerateWall() : std::invalid_argument("degenerate wall (zero length)") {}
};

struct MovingPoint {
  Vec2 pos = Vec2::Zero();
  Vec2 vel = Vec2::Zero();
};

enum class Bounce { Direct, MP12, MP22, MP23 };

struct GhostPrediction {
  Label kind = Label::MP12;
  double range = 0.0;
  double bearing = 0.0;  // rad, relative to the sensor
  Vec2 pos = Vec2::Zero();
  double doppler = 0.0;
  bool valid = false;
  int surface_id = 0;
};

/// Reflection of p across the infinite line through the wall.
Vec2 mirror_point(const Vec2& p, const WallSegment& wall);

/// Mirrors a direction (velocity) across the wall line.
Vec2 mirror_vector(const Vec2& v, const WallSegment& wall);

/// Signed distance of p to the wall line (positive on the left of a->b).
double signed_distance(const Vec2& p, const WallSegment& wall);

/// Point on the wall line where a -> P -> b obeys equal incidence and emergence
/// angles. Empty when that point lies outside the finite segment.
std::optional<Vec2> specular_point(const Vec2& a, const Vec2& b, const WallSegment& wall);

/// Round-trip path length of a bounce kind. Range of the detection is half of it.
double path_length(Bounce kind, const Vec2& sensor, const Vec2& obj_pos, const WallSegment& wall);

/// Direct (first order) detection: range, bearing and radial velocity of the object itself.
GhostPrediction real_detection(const Vec2& sensor, const MovingPoint& obj);

/// MP12, MP22 and MP23 predictions (in that order) for one wall.
std::array<GhostPrediction, 3> ghost_detections(const Vec2& sensor, const MovingPoint& obj, const WallSegment& wall);

double bearing_of(const Vec2& sensor, const Vec2& p);

}  // namespace ghostlab::geometry
