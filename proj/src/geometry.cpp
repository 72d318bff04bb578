#include "ghostlab/geometry.hpp"

#include <cmath>

namespace ghostlab::geometry {

namespace {

struct Line {
  Vec2 origin;
  Vec2 dir;     // unit
  Vec2 normal;  // unit, left of dir
  double length;
};

Line line_of(const WallSegment& wall) {
  const Vec2 d = wall.b - wall.a;
  const double len = d.norm();
  if (!(len > 0.0) || !std::isfinite(len)) throw DegenerateWall();
  const Vec2 u = d / len;
  return {wall.a, u, Vec2(-u.y(), u.x()), len};
}

Vec2 unit(const Vec2& v) { return v / v.norm(); }

}  // namespace

double signed_distance(const Vec2& p, const WallSegment& wall) {
  const Line l = line_of(wall);
  return (p - l.origin).dot(l.normal);
}

Vec2 mirror_point(const Vec2& p, const WallSegment& wall) {
  const Line l = line_of(wall);
  return p - 2.0 * (p - l.origin).dot(l.normal) * l.normal;
}

Vec2 mirror_vector(const Vec2& v, const WallSegment& wall) {
  const Line l = line_of(wall);
  return v - 2.0 * v.dot(l.normal) * l.normal;
}

std::optional<Vec2> specular_point(const Vec2& a, const Vec2& b, const WallSegment& wall) {
  const Line l = line_of(wall);
  const double da = (a - l.origin).dot(l.normal);
  const double db = (b - l.origin).dot(l.normal);
  if (da == 0.0 || db == 0.0 || (da > 0.0) != (db > 0.0)) throw NoSpecularPath();
  // Segment a -> mirror(b) crosses the line at parameter da / (da + db).
  const Vec2 b_img = b - 2.0 * db * l.normal;
  const Vec2 p = a + (da / (da + db)) * (b_img - a);
  const double t = (p - l.origin).dot(l.dir);
  if (t < 0.0 || t > l.length) return std::nullopt;
  return p;
}

double bearing_of(const Vec2& sensor, const Vec2& p) {
  const Vec2 d = p - sensor;
  return std::atan2(d.y(), d.x());
}

double path_length(Bounce kind, const Vec2& sensor, const Vec2& obj_pos, const WallSegment& wall) {
  if (kind == Bounce::Direct) return 2.0 * (obj_pos - sensor).norm();
  const auto p = specular_point(sensor, obj_pos, wall);
  // Outside the segment the path does not exist physically, but the length of the
  // unbounded-line construction is still well defined.
  const Vec2 s_img = mirror_point(sensor, wall);
  const double via_wall = p ? (sensor - *p).norm() + (*p - obj_pos).norm() : (s_img - obj_pos).norm();
  if (kind == Bounce::MP23) return 2.0 * via_wall;
  return via_wall + (obj_pos - sensor).norm();
}

GhostPrediction real_detection(const Vec2& sensor, const MovingPoint& obj) {
  GhostPrediction g;
  g.kind = Label::Real;
  g.range = (obj.pos - sensor).norm();
  g.bearing = bearing_of(sensor, obj.pos);
  g.pos = obj.pos;
  g.doppler = g.range > 0.0 ? obj.vel.dot(unit(obj.pos - sensor)) : 0.0;
  g.valid = true;
  g.surface_id = -1;
  return g;
}

std::array<GhostPrediction, 3> ghost_detections(const Vec2& sensor, const MovingPoint& obj, const WallSegment& wall) {
  const Vec2& o = obj.pos;
  const bool valid = specular_point(sensor, o, wall).has_value();  // throws when no path exists
  const Vec2 s_img = mirror_point(sensor, wall);
  const Vec2 o_img = mirror_point(o, wall);

  const double direct = (o - sensor).norm();
  const double via_wall = (o - s_img).norm();
  // Radial rates of the two legs; the specular point is stationary to first order.
  const double rate_direct = obj.vel.dot(unit(o - sensor));
  const double rate_wall = obj.vel.dot(unit(o - s_img));

  const double range2 = 0.5 * (direct + via_wall);
  const double doppler2 = 0.5 * (rate_direct + rate_wall);

  auto make = [&](Label kind, double range, double bearing, double doppler) {
    GhostPrediction g;
    g.kind = kind;
    g.range = range;
    g.bearing = bearing;
    g.pos = sensor + range * Vec2(std::cos(bearing), std::sin(bearing));
    g.doppler = doppler;
    g.valid = valid;
    g.surface_id = wall.id;
    return g;
  };

  std::array<GhostPrediction, 3> out{
      make(Label::MP12, range2, bearing_of(sensor, o), doppler2),
      make(Label::MP22, range2, bearing_of(sensor, o_img), doppler2),
      make(Label::MP23, (o_img - sensor).norm(), bearing_of(sensor, o_img), rate_wall),
  };
  // The third-order ghost sits exactly on the mirrored object.
  out[2].pos = o_img;
  return out;
}

}  // namespace ghostlab::geometry
