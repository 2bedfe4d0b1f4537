#include "masq/geom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "masq/error.hpp"
#include "masq/rng.hpp"

namespace masq::geom {

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle,
                                               const Vec3& translation) {
  RigidTransform t;
  t.rotation = Quat(Eigen::AngleAxisd(angle, axis.normalized()));
  t.translation = translation;
  return t;
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation = (rotation * other.rotation).normalized();
  out.translation = rotation * other.translation + translation;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation = rotation.conjugate();
  out.translation = -(out.rotation * translation);
  return out;
}

void RigidTransform::validate() const {
  if (std::abs(rotation.norm() - 1.0) > 1e-9) {
    throw InvalidArgument("rigid transform rotation is not a unit quaternion");
  }
  if (!translation.allFinite()) throw InvalidArgument("rigid transform translation not finite");
}

Mat3 CameraModel::intrinsics() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw InvalidArgument("camera principal point outside the image");
  }
  pose.validate();
}

CameraModel CameraModel::look_at(const Vec3& eye, const Vec3& target, double fx, double fy,
                                 double width, double height) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;  // rows are camera axes expressed in world
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  CameraModel cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.width = width;
  cam.height = height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.pose.rotation = Quat(r).normalized();
  cam.pose.translation = -(r * eye);
  return cam;
}

namespace {

Mat3 scale_normalize(const Mat3& m) {
  const double br = m(2, 2);
  if (std::abs(br) > 1e-14) return m / br;
  const double n = m.norm();
  return n > 0.0 ? Mat3(m / n) : m;
}

}  // namespace

Homography::Homography(const Mat3& m) : m_(scale_normalize(m)) {}

Homography Homography::translation(double dx, double dy) {
  Mat3 m = Mat3::Identity();
  m(0, 2) = dx;
  m(1, 2) = dy;
  return Homography(m);
}

Homography Homography::inverse() const {
  Eigen::FullPivLU<Mat3> lu(m_);
  if (!lu.isInvertible()) throw DegenerateConfiguration("homography is singular");
  return Homography(lu.inverse());
}

Homography Homography::operator*(const Homography& other) const {
  return Homography(m_ * other.m_);
}

Vec2 project(const Vec3& p, const CameraModel& cam) {
  if (p.z() <= 1e-9) throw BehindCamera("point is behind the camera");
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

Vec2 project_world(const Vec3& point_world, const CameraModel& cam) {
  return project(cam.pose.apply(point_world), cam);
}

Vec3 unproject(const Vec2& pixel, double depth, const CameraModel& cam) {
  return {(pixel.x() - cam.cx) * depth / cam.fx, (pixel.y() - cam.cy) * depth / cam.fy, depth};
}

Vec2 warp(const Homography& h, const Vec2& p) {
  const Vec3 q = h.matrix() * Vec3(p.x(), p.y(), 1.0);
  if (std::abs(q.z()) < 1e-12) throw PointAtInfinity("warped point maps to infinity");
  return q.head<2>() / q.z();
}

namespace {

// Similarity that moves the centroid to the origin and the mean distance to sqrt(2).
Mat3 conditioning(std::span<const Vec2> pts) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - c).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Mat3 t = Mat3::Identity();
  t(0, 0) = s;
  t(1, 1) = s;
  t(0, 2) = -s * c.x();
  t(1, 2) = -s * c.y();
  return t;
}

}  // namespace

Homography estimate_homography(std::span<const Vec2> src, std::span<const Vec2> dst) {
  if (src.size() != dst.size()) throw InvalidArgument("correspondence lists differ in length");
  if (src.size() < 4) throw DegenerateConfiguration("need at least 4 correspondences");
  const Mat3 ts = conditioning(src);
  const Mat3 td = conditioning(dst);

  const Eigen::Index n = static_cast<Eigen::Index>(src.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(2 * n, 9), 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 s = ts * Vec3(src[i].x(), src[i].y(), 1.0);
    const Vec3 d = td * Vec3(dst[i].x(), dst[i].y(), 1.0);
    const double x = s.x() / s.z(), y = s.y() / s.z();
    const double u = d.x() / d.z(), v = d.y() / d.z();
    a.row(2 * i) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(7) / sv(0) < 1e-10) {
    throw DegenerateConfiguration("design matrix is rank deficient");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Homography(td.inverse() * hn * ts);
}

namespace {

double transfer_error(const Homography& h, const Vec2& s, const Vec2& d) {
  const Vec3 q = h.matrix() * Vec3(s.x(), s.y(), 1.0);
  if (std::abs(q.z()) < 1e-12) return std::numeric_limits<double>::infinity();
  return (q.head<2>() / q.z() - d).norm();
}

}  // namespace

RansacResult estimate_homography_ransac(std::span<const Vec2> src, std::span<const Vec2> dst,
                                        const RansacOptions& options) {
  if (src.size() != dst.size()) throw InvalidArgument("correspondence lists differ in length");
  const std::size_t n = src.size();
  RansacResult result;
  if (n <= 4) {
    result.homography = estimate_homography(src, dst);
    result.inliers.assign(n, true);
    return result;
  }

  Rng rng(options.seed);
  std::vector<bool> best;
  std::size_t best_count = 0;
  double needed = static_cast<double>(options.max_iterations);
  int it = 0;
  std::array<Vec2, 4> s4, d4;
  for (; it < options.max_iterations && it < needed; ++it) {
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      bool fresh = false;
      while (!fresh) {
        idx[k] = rng.below(n);
        fresh = std::find(idx.begin(), idx.begin() + k, idx[k]) == idx.begin() + k;
      }
      s4[k] = src[idx[k]];
      d4[k] = dst[idx[k]];
    }
    Homography h;
    try {
      h = estimate_homography(s4, d4);
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    std::vector<bool> inl(n);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      inl[i] = transfer_error(h, src[i], dst[i]) < options.inlier_threshold;
      count += inl[i];
    }
    if (count > best_count) {
      best_count = count;
      best = std::move(inl);
      const double w = static_cast<double>(count) / static_cast<double>(n);
      const double p_fail = 1.0 - std::pow(w, 4);
      if (p_fail <= 0.0) {
        needed = 0.0;
      } else {
        needed = std::log(1.0 - options.confidence) / std::log(p_fail);
      }
    }
  }
  result.iterations = it;
  if (best_count < 4) throw DegenerateConfiguration("no consensus set of 4 or more points");

  std::vector<Vec2> si, di;
  for (std::size_t i = 0; i < n; ++i) {
    if (best[i]) {
      si.push_back(src[i]);
      di.push_back(dst[i]);
    }
  }
  result.homography = estimate_homography(si, di);
  result.inliers = std::move(best);
  return result;
}

Homography plane_induced_homography(const CameraModel& from, const CameraModel& to,
                                    const Plane& plane) {
  // Relative motion from camera `from` coordinates into camera `to` coordinates.
  const RigidTransform rel = to.pose * from.pose.inverse();
  // Plane expressed in `from` camera coordinates: n_c . X = d_c.
  const Mat3 r_from = from.pose.rotation_matrix();
  const Vec3 n_c = r_from * plane.normal;
  const double d_c = plane.offset + n_c.dot(from.pose.translation);
  if (std::abs(d_c) < 1e-12) throw DegenerateConfiguration("plane passes through camera center");
  const Mat3 m = to.intrinsics() *
                 (rel.rotation_matrix() + rel.translation * n_c.transpose() / d_c) *
                 from.intrinsics().inverse();
  return Homography(m);
}

double rotation_angle(const Quat& q) {
  const double v = q.vec().norm();
  const double w = std::abs(q.w());
  return std::clamp(2.0 * std::atan2(v, w), 0.0, std::numbers::pi);
}

CameraMotion camera_motion(const RigidTransform& prev_pose, const RigidTransform& next_pose) {
  const RigidTransform rel = next_pose * prev_pose.inverse();
  return {rel.translation.norm(), rotation_angle(rel.rotation)};
}

}  // namespace masq::geom
