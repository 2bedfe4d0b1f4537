#include "masq/retarget.hpp"

#include <algorithm>
#include <cmath>

#include "masq/error.hpp"

namespace masq {

const char* side_name(Side s) { return s == Side::Left ? "left" : "right"; }

namespace retarget {

void HandKeypoints21::validate() const {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw InvalidArgument("hand confidence outside [0, 1]");
  }
  for (const auto& p : points) {
    if (!p.allFinite()) throw InvalidArgument("hand keypoint is not finite");
  }
}

bool EEPose::finite() const {
  return position.allFinite() && orientation.coeffs().allFinite() && std::isfinite(grip);
}

EEPose EEPose::transformed(const geom::RigidTransform& t) const {
  EEPose out = *this;
  out.position = t.apply(position);
  out.orientation = (t.rotation * orientation).normalized();
  return out;
}

void SmoothingConfig::validate() const {
  for (int w : {position_window, orientation_window, grip_window}) {
    if (w < 1 || w % 2 == 0) throw InvalidArgument("smoothing windows must be odd and >= 1");
  }
}

EEPose fit_ee_pose(const HandKeypoints21& hand, double aperture_max) {
  if (!(aperture_max > 0.0)) throw InvalidArgument("aperture_max must be positive");
  hand.validate();
  const Vec3& wrist = hand.points[kWrist];
  const Vec3& thumb = hand.points[kThumbTip];
  const Vec3& index = hand.points[kIndexTip];

  EEPose pose;
  pose.side = hand.side;
  pose.position = 0.5 * (thumb + index);
  pose.grip = std::clamp((thumb - index).norm() / aperture_max, 0.0, 1.0);

  const Vec3 reach = pose.position - wrist;
  if (reach.norm() < 1e-6) throw DegenerateHand("grasp point coincides with wrist");
  const Vec3 approach = reach.normalized();

  Vec3 closing = index - thumb;
  closing -= closing.dot(approach) * approach;
  if (closing.norm() < 1e-9) {
    // Closed or edge-on grasp: any axis orthogonal to the approach will do.
    const Vec3 ref = std::abs(approach.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    closing = ref.cross(approach);
  }
  closing.normalize();

  Mat3 r;
  r.col(0) = approach;
  r.col(1) = closing;
  r.col(2) = approach.cross(closing);
  pose.orientation = Quat(r).normalized();
  return pose;
}

namespace {

int half_width(int window, std::size_t i, std::size_t n) {
  const std::size_t half = static_cast<std::size_t>(window / 2);
  return static_cast<int>(std::min({half, i, n - 1 - i}));
}

}  // namespace

std::vector<EEPose> smooth(std::span<const EEPose> traj, const SmoothingConfig& cfg) {
  if (traj.empty()) throw EmptyTrajectory("cannot smooth an empty trajectory");
  cfg.validate();
  const std::size_t n = traj.size();
  for (const auto& p : traj) {
    if (p.side != traj.front().side) throw InvalidArgument("trajectory mixes sides");
  }

  std::vector<EEPose> out(traj.begin(), traj.end());
  for (std::size_t i = 0; i < n; ++i) {
    // Means are accumulated as offsets from the center sample so that a
    // constant window reproduces its value exactly.
    if (int h = half_width(cfg.position_window, i, n); h > 0) {
      Vec3 acc = Vec3::Zero();
      for (int k = -h; k <= h; ++k) acc += traj[i + k].position - traj[i].position;
      out[i].position = traj[i].position + acc / static_cast<double>(2 * h + 1);
    }
    if (int h = half_width(cfg.grip_window, i, n); h > 0) {
      double acc = 0.0;
      for (int k = -h; k <= h; ++k) acc += traj[i + k].grip - traj[i].grip;
      out[i].grip = traj[i].grip + acc / static_cast<double>(2 * h + 1);
    }
    if (int h = half_width(cfg.orientation_window, i, n); h > 0) {
      const Eigen::Vector4d center = traj[i].orientation.coeffs();
      Eigen::Vector4d acc = Eigen::Vector4d::Zero();
      for (int k = -h; k <= h; ++k) {
        Eigen::Vector4d q = traj[i + k].orientation.coeffs();
        if (q.dot(center) < 0.0) q = -q;
        acc += q - center;
      }
      Eigen::Vector4d mean = center + acc / static_cast<double>(2 * h + 1);
      out[i].orientation = Quat(mean(3), mean(0), mean(1), mean(2)).normalized();
    }
  }
  return out;
}

}  // namespace retarget
}  // namespace masq
