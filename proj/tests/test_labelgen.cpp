#include <cmath>

#include "doctest.h"
#include "masq/error.hpp"
#include "masq/labelgen.hpp"
#include "support/scenes.hpp"
#include "support/tracks.hpp"

using namespace masq;
using namespace masq::labelgen;
using masq::testing::point_on_plane;
using masq::testing::random_plane;
using masq::testing::drifting_track;
using masq::testing::trajectory_on_plane;

namespace {

Vec2 normalized_projection(const Vec3& p, const geom::CameraModel& cam) {
  const Vec3 c = cam.pose.rotation * p + cam.pose.translation;
  return {(cam.fx * c.x() / c.z() + cam.cx) / cam.width, (cam.fy * c.y() / c.z() + cam.cy) / cam.height};
}

}  // namespace

TEST_CASE("static camera labels are raw projections of future positions") {
  Rng rng(1);
  const int n = 12;
  const geom::Plane plane;
  const auto traj = trajectory_on_plane(n, plane, rng);
  const auto cam = geom::CameraModel::look_at({0, -0.3, 0.8}, {0, 0.45, 0}, 450, 450, 640, 480);
  const std::vector<geom::CameraModel> cams(n, cam);
  LabelConfig cfg;
  cfg.horizon = 4;
  const auto labels = make_labels(traj, cams, HomographyLookup::static_camera(), cfg);
  REQUIRE(labels.size() == std::size_t(n));
  for (int t = 0; t < n; ++t)
    for (int s = 0; s < 2; ++s) {
      const auto& l = labels[t][s];
      REQUIRE(l.waypoints.size() == 5u);
      CHECK(l.valid);
      CHECK(l.source_frame == t);
      for (int k = 0; k <= 4; ++k) {
        const int f = std::min(t + k, n - 1);
        CHECK((l.waypoints[k] - normalized_projection(traj[f][s].position, cam)).norm() < 1e-12);
        CHECK(l.waypoints[k].x() >= 0.0);
        CHECK(l.waypoints[k].x() <= 1.0);
      }
    }

  SUBCASE("labels commute with a time shift") {
    for (int t = 0; t + 1 < n; ++t)
      for (int s = 0; s < 2; ++s)
        for (int k = 0; k < 4; ++k)
          CHECK(labels[t + 1][s].waypoints[k] == labels[t][s].waypoints[k + 1]);
  }
  SUBCASE("the final frame repeats its last waypoint") {
    for (int s = 0; s < 2; ++s)
      for (int k = 1; k <= 4; ++k)
        CHECK(labels[n - 1][s].waypoints[k] == labels[n - 1][s].waypoints[0]);
  }
}

TEST_CASE("moving camera labels match direct projection into frame t") {
  Rng rng(2);
  for (int clip = 0; clip < 10; ++clip) {
    const int n = 30;
    const auto plane = random_plane(rng);
    const auto cams = drifting_track(n, rng);
    const auto traj = trajectory_on_plane(n, plane, rng);
    LabelConfig cfg;
    cfg.normalize = false;
    const auto labels = make_labels(traj, cams, HomographyLookup::from_camera_track(cams, plane), cfg);
    double worst = 0.0;
    for (int t = 0; t < n; ++t)
      for (int s = 0; s < 2; ++s)
        for (int k = 0; k <= cfg.horizon; ++k) {
          const int f = std::min(t + k, n - 1);
          const Vec3 c = cams[t].pose.rotation * traj[f][s].position + cams[t].pose.translation;
          const Vec2 oracle(cams[t].fx * c.x() / c.z() + cams[t].cx, cams[t].fy * c.y() / c.z() + cams[t].cy);
          worst = std::max(worst, (labels[t][s].waypoints[k] - oracle).norm());
        }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("homography lookup chains adjacent maps and reports gaps") {
  HomographyLookup h;
  h.set(1, 0, geom::Homography::translation(1, 0));
  h.set(1, 2, geom::Homography::translation(0, 2));  // stored against the chain direction
  const Vec2 p(10, 10);
  CHECK((geom::warp(h.get(2, 0), p) - Vec2(11, 8)).norm() < 1e-12);
  CHECK((geom::warp(h.get(0, 2), p) - Vec2(9, 12)).norm() < 1e-12);
  CHECK_THROWS_AS(h.get(3, 0), MissingHomography);
  CHECK(HomographyLookup::static_camera().get(5, 0).matrix() == Mat3::Identity());
}

TEST_CASE("sentinel hands get sentinel waypoints only") {
  const int n = 6;
  Rng rng(3);
  const auto traj = trajectory_on_plane(n, geom::Plane{}, rng);
  const auto cam = geom::CameraModel::look_at({0, -0.3, 0.8}, {0, 0.45, 0}, 450, 450, 640, 480);
  const std::vector<geom::CameraModel> cams(n, cam);
  std::vector<HandFlags> sentinel(n, HandFlags{true, false});
  LabelConfig cfg;
  cfg.horizon = 3;
  const auto labels = make_labels(traj, cams, HomographyLookup::static_camera(), cfg, sentinel);
  for (const auto& pair : labels) {
    CHECK_FALSE(pair[0].valid);
    for (const auto& w : pair[0].waypoints) CHECK(w == cfg.sentinel);
    CHECK(pair[1].valid);
    for (const auto& w : pair[1].waypoints) CHECK(w != cfg.sentinel);
  }
}

TEST_CASE("label config validation") {
  LabelConfig cfg;
  cfg.horizon = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg.horizon = 4;
  cfg.sentinel = Vec2(0.5, 0.5);
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("missing-hand rules") {
  const int n = 10;
  std::vector<PosePair> poses(n);
  for (int t = 0; t < n; ++t)
    for (int s = 0; s < 2; ++s) poses[t][s].position = Vec3(t, s, 0);

  SUBCASE("occluded hand reuses its last visible pose") {
    std::vector<HandFlags> presence(n, HandFlags{true, true});
    for (int t = 6; t < n; ++t) presence[t][1] = false;
    const auto r = apply_missing_hand_rules(presence, poses);
    for (int t = 6; t < n; ++t) {
      CHECK(r.poses[t][1].position == poses[5][1].position);
      CHECK_FALSE(r.sentinel[t][1]);
      CHECK(r.keep[t]);
    }
    for (int t = 0; t < n; ++t) CHECK(r.poses[t][0].position == poses[t][0].position);
  }
  SUBCASE("a hand that never appears is sentinel throughout") {
    std::vector<HandFlags> presence(n, HandFlags{false, true});
    const auto r = apply_missing_hand_rules(presence, poses);
    for (int t = 0; t < n; ++t) {
      CHECK(r.sentinel[t][0]);
      CHECK(r.keep[t]);
    }
  }
  SUBCASE("frames before either hand appears are discarded") {
    std::vector<HandFlags> presence(n, HandFlags{true, false});
    for (int t = 0; t < 3; ++t) presence[t] = {false, false};
    const auto r = apply_missing_hand_rules(presence, poses);
    for (int t = 0; t < 3; ++t) CHECK_FALSE(r.keep[t]);
    for (int t = 3; t < n; ++t) CHECK(r.keep[t]);
  }
  SUBCASE("both hands missing after being seen is kept with reused poses") {
    std::vector<HandFlags> presence(n, HandFlags{true, true});
    presence[7] = {false, false};
    const auto r = apply_missing_hand_rules(presence, poses);
    CHECK(r.keep[7]);
    CHECK(r.poses[7][0].position == poses[6][0].position);
    CHECK(r.poses[7][1].position == poses[6][1].position);
  }
}
