#pragma once

#include <cmath>
#include <vector>

#include "masq/geom.hpp"
#include "masq/rng.hpp"

namespace masq::testing {

inline Vec3 random_unit(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

// A camera hovering over the table plane z = 0, looking down at a point near
// the origin, with a random tilt.
inline geom::CameraModel random_table_camera(Rng& rng) {
  const Vec3 target(rng.uniform(-0.2, 0.2), rng.uniform(0.2, 0.6), 0.0);
  const Vec3 eye = target + Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.6, -0.2),
                                 rng.uniform(0.4, 0.9));
  return geom::CameraModel::look_at(eye, target, rng.uniform(300, 600), rng.uniform(300, 600), 640,
                                    480);
}

// Random plane n . X = d roughly facing the camera pair.
inline geom::Plane random_plane(Rng& rng) {
  geom::Plane p;
  p.normal = (Vec3(0, 0, 1) + 0.3 * random_unit(rng)).normalized();
  p.offset = rng.uniform(-0.05, 0.05);
  return p;
}

// Point on the plane near the given xy.
inline Vec3 point_on_plane(const geom::Plane& plane, double x, double y) {
  // Solve n . (x, y, z) = offset for z.
  const double z = (plane.offset - plane.normal.x() * x - plane.normal.y() * y) / plane.normal.z();
  return {x, y, z};
}

}  // namespace masq::testing
