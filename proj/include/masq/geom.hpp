#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cstdint>
#include <span>
#include <vector>

namespace masq {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

namespace geom {

/// Rigid motion x -> R x + t. Rotation is held as a unit quaternion.
struct RigidTransform {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_axis_angle(const Vec3& axis, double angle,
                                        const Vec3& translation = Vec3::Zero());

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

  /// (a * b).apply(p) == a.apply(b.apply(p))
  RigidTransform operator*(const RigidTransform& other) const;
  RigidTransform inverse() const;

  /// Throws InvalidArgument unless the quaternion has unit norm within 1e-9.
  void validate() const;
};

/// Pinhole camera. `pose` maps world coordinates into the camera frame
/// (x right, y down, z forward).
struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double width = 1.0;
  double height = 1.0;
  RigidTransform pose;

  Mat3 intrinsics() const;
  Vec3 center_world() const { return pose.inverse().translation; }
  void validate() const;

  /// Camera at `eye` looking at `target`, with image "up" roughly opposite to
  /// world +z.
  static CameraModel look_at(const Vec3& eye, const Vec3& target, double fx,
                             double fy, double width, double height);
};

/// Plane n . X = offset, n unit length, in world coordinates.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
};

/// 3x3 projective map between image planes. Stored scale-normalized
/// (bottom-right entry 1 whenever it is nonzero).
class Homography {
 public:
  Homography() : m_(Mat3::Identity()) {}
  explicit Homography(const Mat3& m);

  static Homography identity() { return Homography(); }
  static Homography translation(double dx, double dy);

  const Mat3& matrix() const { return m_; }
  Homography inverse() const;
  /// (a * b) maps through b first, then a.
  Homography operator*(const Homography& other) const;

 private:
  Mat3 m_;
};

/// Camera-frame point to pixel. Throws BehindCamera when z <= 1e-9.
Vec2 project(const Vec3& point_cam, const CameraModel& cam);

/// World point to pixel through `cam.pose`.
Vec2 project_world(const Vec3& point_world, const CameraModel& cam);

/// Pixel at a given camera-frame depth back to a camera-frame point.
Vec3 unproject(const Vec2& pixel, double depth, const CameraModel& cam);

/// Projective warp with de-homogenization. Throws PointAtInfinity when the
/// homogeneous scale is below 1e-12 in magnitude.
Vec2 warp(const Homography& h, const Vec2& p);

/// Normalized DLT (Hartley conditioning, SVD least squares) over all
/// correspondences. Throws DegenerateConfiguration for fewer than 4 points or a
/// rank-deficient design matrix.
Homography estimate_homography(std::span<const Vec2> src, std::span<const Vec2> dst);

struct RansacOptions {
  double inlier_threshold = 2.0;  // pixels, forward transfer error
  double confidence = 0.999;
  int max_iterations = 2000;
  std::uint64_t seed = 0;
};

struct RansacResult {
  Homography homography;
  std::vector<bool> inliers;
  int iterations = 0;
};

/// Consensus DLT: minimal 4-point hypotheses, adaptive iteration count,
/// final refit on the largest inlier set.
RansacResult estimate_homography_ransac(std::span<const Vec2> src, std::span<const Vec2> dst,
                                        const RansacOptions& options = {});

/// Homography induced by `plane` that maps pixels of `from` into pixels of `to`.
Homography plane_induced_homography(const CameraModel& from, const CameraModel& to,
                                    const Plane& plane);

struct CameraMotion {
  double translation = 0.0;  // meters
  double rotation = 0.0;     // radians, in [0, pi]
};

/// Magnitude of the relative motion between two world-to-camera poses.
CameraMotion camera_motion(const RigidTransform& prev_pose, const RigidTransform& next_pose);

/// Shortest rotation angle of a unit quaternion, in [0, pi].
double rotation_angle(const Quat& q);

}  // namespace geom
}  // namespace masq
