#include <cmath>
#include <numbers>

#include "doctest.h"
#include "masq/error.hpp"
#include "masq/geom.hpp"
#include "support/scenes.hpp"

using namespace masq;
using namespace masq::geom;
using masq::testing::point_on_plane;
using masq::testing::random_plane;
using masq::testing::random_table_camera;
using masq::testing::random_unit;

namespace {

CameraModel simple_camera() {
  CameraModel c;
  c.fx = c.fy = 100;
  c.cx = c.cy = 64;
  c.width = c.height = 128;
  return c;
}

double max_reprojection(const Homography& h, const std::vector<Vec2>& src,
                        const std::vector<Vec2>& dst) {
  double worst = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) worst = std::max(worst, (warp(h, src[i]) - dst[i]).norm());
  return worst;
}

Homography random_invertible(Rng& rng) {
  Mat3 m = Mat3::Identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) += (i == 2 && j < 2 ? 1e-4 : 0.2) * rng.normal();
  return Homography(m);
}

}  // namespace

TEST_CASE("project") {
  const auto cam = simple_camera();
  CHECK(project({0, 0, 1.0}, cam) == Vec2(64, 64));
  CHECK((project({0.1, 0, 1.0}, cam) - Vec2(74, 64)).norm() < 1e-12);
  CHECK_THROWS_AS(project({0, 0, -1.0}, cam), BehindCamera);
  CHECK_THROWS_AS(project({0, 0, 1e-10}, cam), BehindCamera);
}

TEST_CASE("project then unproject at the same depth recovers the point") {
  Rng rng(1);
  const auto cam = simple_camera();
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.2, 5));
    CHECK((unproject(project(p, cam), p.z(), cam) - p).norm() < 1e-9);
  }
}

TEST_CASE("camera validation") {
  auto cam = simple_camera();
  CHECK_NOTHROW(cam.validate());
  cam.fx = 0;
  CHECK_THROWS_AS(cam.validate(), InvalidArgument);
  cam = simple_camera();
  cam.cx = 128;
  CHECK_THROWS_AS(cam.validate(), InvalidArgument);
  cam = simple_camera();
  cam.pose.rotation.coeffs() *= 1.001;
  CHECK_THROWS_AS(cam.validate(), InvalidArgument);
}

TEST_CASE("rigid transform composition and inverse") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto a = RigidTransform::from_axis_angle(random_unit(rng), rng.uniform(0, 3), random_unit(rng));
    const auto b = RigidTransform::from_axis_angle(random_unit(rng), rng.uniform(0, 3), random_unit(rng));
    const auto c = RigidTransform::from_axis_angle(random_unit(rng), rng.uniform(0, 3), random_unit(rng));
    const Vec3 p = random_unit(rng) * 2.0;
    CHECK(((a * b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
    CHECK((((a * b) * c).apply(p) - (a * (b * c)).apply(p)).norm() < 1e-12);
    CHECK(((a.inverse() * a).apply(p) - p).norm() < 1e-12);
    CHECK_NOTHROW((a * b).validate());
  }
}

TEST_CASE("warp basics") {
  CHECK(warp(Homography::identity(), {10, 20}) == Vec2(10, 20));
  CHECK((warp(Homography::translation(5, 0), {10, 20}) - Vec2(15, 20)).norm() < 1e-12);
  Mat3 m = Mat3::Identity();
  m(2, 0) = 1.0;
  m(2, 2) = 0.0;
  CHECK_THROWS_AS(warp(Homography(m), {0, 5}), PointAtInfinity);
}

TEST_CASE("warp through a homography and its inverse is the identity") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto h = random_invertible(rng);
    const Vec2 p(rng.uniform(0, 640), rng.uniform(0, 480));
    CHECK((warp(h, warp(h.inverse(), p)) - p).norm() < 1e-9);
  }
}

TEST_CASE("estimate_homography on trivial correspondences") {
  const std::vector<Vec2> src{{10, 10}, {200, 15}, {190, 220}, {5, 180}};
  const auto h = estimate_homography(src, src);
  CHECK((h.matrix() - Mat3::Identity()).norm() < 1e-9);

  std::vector<Vec2> dst;
  for (const auto& p : src) dst.push_back(p + Vec2(5, 0));
  const auto t = estimate_homography(src, dst);
  CHECK(t.matrix()(0, 2) == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(std::abs(t.matrix()(1, 2)) < 1e-9);
}

TEST_CASE("estimate_homography rejects degenerate input") {
  const std::vector<Vec2> three{{0, 0}, {1, 0}, {0, 1}};
  CHECK_THROWS_AS(estimate_homography(three, three), DegenerateConfiguration);
  const std::vector<Vec2> collinear{{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}};
  CHECK_THROWS_AS(estimate_homography(collinear, collinear), DegenerateConfiguration);
}

TEST_CASE("DLT matches the plane-induced homography on noiseless views") {
  Rng rng(4);
  for (int scene = 0; scene < 50; ++scene) {
    const auto a = random_table_camera(rng);
    const auto b = random_table_camera(rng);
    const auto plane = random_plane(rng);
    std::vector<Vec2> src, dst;
    for (int i = 0; i < 12; ++i) {
      const Vec3 x = point_on_plane(plane, rng.uniform(-0.3, 0.3), rng.uniform(0.1, 0.7));
      src.push_back(project_world(x, a));
      dst.push_back(project_world(x, b));
    }
    const auto est = estimate_homography(src, dst);
    const auto oracle = plane_induced_homography(a, b, plane);
    CHECK(max_reprojection(est, src, dst) < 1e-6);
    CHECK(max_reprojection(oracle, src, dst) < 1e-6);
  }
}

TEST_CASE("DLT degrades gracefully under pixel noise") {
  Rng rng(5);
  const double sigma = 0.5;
  double total = 0.0;
  int count = 0;
  for (int scene = 0; scene < 50; ++scene) {
    const auto a = random_table_camera(rng);
    const auto b = random_table_camera(rng);
    const auto plane = random_plane(rng);
    std::vector<Vec2> src, dst, clean;
    for (int i = 0; i < 20; ++i) {
      const Vec3 x = point_on_plane(plane, rng.uniform(-0.3, 0.3), rng.uniform(0.1, 0.7));
      src.push_back(project_world(x, a) + Vec2(sigma * rng.normal(), sigma * rng.normal()));
      const Vec2 d = project_world(x, b);
      clean.push_back(d);
      dst.push_back(d + Vec2(sigma * rng.normal(), sigma * rng.normal()));
    }
    const auto est = estimate_homography(src, dst);
    for (std::size_t i = 0; i < src.size(); ++i) {
      total += (warp(est, src[i]) - dst[i]).norm();
      ++count;
    }
  }
  CHECK(total / count < 2.0 * sigma);
}

TEST_CASE("RANSAC ignores outliers and is seeded") {
  Rng rng(6);
  const auto a = random_table_camera(rng);
  const auto b = random_table_camera(rng);
  const Plane plane;
  std::vector<Vec2> src, dst;
  for (int i = 0; i < 40; ++i) {
    const Vec3 x = point_on_plane(plane, rng.uniform(-0.3, 0.3), rng.uniform(0.1, 0.7));
    src.push_back(project_world(x, a));
    dst.push_back(project_world(x, b));
  }
  for (int i = 0; i < 10; ++i) dst[i * 4] += Vec2(rng.uniform(30, 80), rng.uniform(-80, -30));
  RansacOptions opt;
  opt.seed = 11;
  const auto r1 = estimate_homography_ransac(src, dst, opt);
  const auto r2 = estimate_homography_ransac(src, dst, opt);
  CHECK(r1.homography.matrix() == r2.homography.matrix());
  CHECK(r1.iterations <= opt.max_iterations);
  int inliers = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    inliers += r1.inliers[i];
    if (i % 4 != 0 || i >= 40) CHECK(r1.inliers[i]);
  }
  CHECK(inliers == 30);
  const auto oracle = plane_induced_homography(a, b, plane);
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!r1.inliers[i]) continue;
    CHECK((warp(r1.homography, src[i]) - warp(oracle, src[i])).norm() < 1e-6);
  }
}

TEST_CASE("camera_motion") {
  const auto id = RigidTransform::identity();
  auto m = camera_motion(id, id);
  CHECK(m.translation == 0.0);
  CHECK(m.rotation == 0.0);

  RigidTransform moved;
  moved.translation = Vec3(0.06, 0, 0);
  m = camera_motion(id, moved);
  CHECK(m.translation == doctest::Approx(0.06).epsilon(1e-12));
  CHECK(m.rotation == 0.0);

  const auto rot = RigidTransform::from_axis_angle(Vec3::UnitZ(), 0.5);
  m = camera_motion(id, rot);
  CHECK(m.translation == 0.0);
  CHECK(std::abs(m.rotation - 0.5) < 1e-9);
}

TEST_CASE("camera_motion is symmetric and bounded") {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const auto a = RigidTransform::from_axis_angle(random_unit(rng), rng.uniform(0, 6.2), random_unit(rng));
    const auto b = RigidTransform::from_axis_angle(random_unit(rng), rng.uniform(0, 6.2), random_unit(rng));
    const auto ab = camera_motion(a, b);
    const auto ba = camera_motion(b, a);
    CHECK(std::abs(ab.translation - ba.translation) < 1e-12);
    CHECK(std::abs(ab.rotation - ba.rotation) < 1e-12);
    CHECK(ab.rotation >= 0.0);
    CHECK(ab.rotation <= std::numbers::pi);
  }
}
