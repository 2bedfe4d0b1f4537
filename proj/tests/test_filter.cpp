#include <cmath>

#include "doctest.h"
#include "masq/error.hpp"
#include "masq/filter.hpp"
#include "masq/rng.hpp"

using namespace masq;
using namespace masq::filter;
using labelgen::HandFlags;
using labelgen::PosePair;

namespace {

struct Clip {
  std::vector<geom::CameraMotion> motions;
  std::vector<PosePair> poses;
  std::vector<bool> keep;
  std::vector<HandFlags> sentinel;

  explicit Clip(int n)
      : motions(n), poses(n), keep(n, true), sentinel(n, HandFlags{false, false}) {
    for (auto& p : poses) {
      p[0].position = Vec3(-0.2, 0.4, 0.05);
      p[1].position = Vec3(0.2, 0.4, 0.05);
    }
  }
  FilterResult run(const FilterConfig& cfg = {}) const {
    return filter_clip(motions, poses, keep, sentinel, cfg);
  }
};

}  // namespace

TEST_CASE("static camera with valid actions keeps every frame") {
  const Clip c(8);
  const auto r = c.run();
  CHECK(r.retained.size() == 8u);
  CHECK(r.report.kept_frames == 8u);
  CHECK(r.report.reconciles());
}

TEST_CASE("translation over the limit drops the frame") {
  Clip c(5);
  c.motions[3].translation = 0.06;
  const auto r = c.run();
  CHECK(r.retained == std::vector<int>{0, 1, 2, 4});
  CHECK(r.report.reasons[3] == DropReason::CameraMotion);
  CHECK(r.report.dropped_camera_motion == 1u);
}

TEST_CASE("thresholds are strict") {
  Clip c(4);
  c.motions[1].rotation = 0.5;
  c.motions[2].rotation = 0.5001;
  c.motions[3].translation = 0.05;
  const auto r = c.run();
  CHECK(r.retained == std::vector<int>{0, 1, 3});
  CHECK(r.report.reasons[2] == DropReason::CameraMotion);
}

TEST_CASE("invalid actions") {
  Clip c(5);
  c.poses[1][0].position = Vec3(1.5, 0, 0);
  c.poses[2][1].position.x() = std::nan("");
  // Sentinel hands are not checked.
  c.poses[3][0].position = Vec3(9, 9, 9);
  c.sentinel[3][0] = true;
  const auto r = c.run();
  CHECK(r.retained == std::vector<int>{0, 3, 4});
  CHECK(r.report.dropped_invalid_action == 2u);
  CHECK(r.report.reasons[1] == DropReason::InvalidAction);
}

TEST_CASE("first matching reason wins") {
  Clip c(3);
  c.motions[1].translation = 0.2;
  c.poses[1][0].position = Vec3(5, 0, 0);
  c.keep[1] = false;
  c.poses[2][0].position = Vec3(5, 0, 0);
  c.keep[2] = false;
  const auto r = c.run();
  CHECK(r.report.reasons[1] == DropReason::CameraMotion);
  CHECK(r.report.reasons[2] == DropReason::InvalidAction);
  c.poses[2][0].position = Vec3(0, 0, 0);
  CHECK(c.run().report.reasons[2] == DropReason::BothHandsMissing);
}

TEST_CASE("loosening thresholds never shrinks the retained set") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Clip c(30);
    for (auto& m : c.motions) m = geom::CameraMotion{rng.uniform(0, 0.1), rng.uniform(0, 1.0)};
    for (auto& p : c.poses) p[0].position = Vec3(rng.uniform(-1.2, 1.2), 0, 0);
    FilterConfig tight;
    tight.max_translation = rng.uniform(0.01, 0.08);
    tight.max_rotation = rng.uniform(0.1, 0.8);
    tight.workspace_radius = rng.uniform(0.3, 1.0);
    FilterConfig loose = tight;
    loose.max_translation += rng.uniform(0, 0.05);
    loose.max_rotation += rng.uniform(0, 0.3);
    loose.workspace_radius += rng.uniform(0, 0.3);
    const auto a = c.run(tight);
    const auto b = c.run(loose);
    CHECK(a.report.reconciles());
    CHECK(b.report.reconciles());
    for (int t = 0; t < 30; ++t)
      if (a.report.reasons[t] == DropReason::Kept) CHECK(b.report.reasons[t] == DropReason::Kept);
  }
}

TEST_CASE("step motions come from consecutive camera poses") {
  std::vector<geom::CameraModel> cams(3);
  cams[1].pose.translation = Vec3(0.03, 0.04, 0);
  cams[2].pose = geom::RigidTransform::from_axis_angle(Vec3::UnitY(), 0.3, cams[1].pose.translation);
  const auto m = step_motions(cams);
  REQUIRE(m.size() == 3u);
  CHECK(m[0].translation == 0.0);
  CHECK(m[1].translation == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(m[2].rotation == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("report text and accumulation") {
  Clip c(4);
  c.motions[2].translation = 1.0;
  const auto r = c.run();
  FilterReport total;
  total.accumulate(r.report);
  total.accumulate(r.report);
  CHECK(total.total_frames == 8u);
  CHECK(total.kept_frames == 6u);
  const auto text = r.report.to_text();
  CHECK(text.find("dropped_camera_motion: 1") != std::string::npos);
  FilterConfig bad;
  bad.max_rotation = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
