#pragma once

#include <vector>

#include "masq/labelgen.hpp"
#include "support/scenes.hpp"

namespace masq::testing {

// Camera drifting smoothly over the table so every frame sees the workspace.
inline std::vector<geom::CameraModel> drifting_track(int n, Rng& rng) {
  std::vector<geom::CameraModel> cams;
  Vec3 eye(0.0, -0.35, 0.7);
  Vec3 target(0.0, 0.45, 0.0);
  for (int t = 0; t < n; ++t) {
    eye += Vec3(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), rng.uniform(-0.01, 0.01));
    target += Vec3(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), 0.0);
    cams.push_back(geom::CameraModel::look_at(eye, target, 500, 500, 640, 480));
  }
  return cams;
}

inline std::vector<labelgen::PosePair> trajectory_on_plane(int n, const geom::Plane& plane, Rng& rng) {
  std::vector<labelgen::PosePair> traj(n);
  Vec2 l(-0.15, 0.4), r(0.15, 0.4);
  for (int t = 0; t < n; ++t) {
    l += Vec2(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02));
    r += Vec2(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02));
    traj[t][0].position = point_on_plane(plane, l.x(), l.y());
    traj[t][0].side = Side::Left;
    traj[t][1].position = point_on_plane(plane, r.x(), r.y());
    traj[t][1].side = Side::Right;
  }
  return traj;
}

}  // namespace masq::testing
