#pragma once

#include <array>
#include <span>
#include <vector>

#include "masq/geom.hpp"

namespace masq {

enum class Side { Left = 0, Right = 1 };
inline constexpr std::array<Side, 2> kSides{Side::Left, Side::Right};
inline constexpr int index_of(Side s) { return static_cast<int>(s); }
const char* side_name(Side s);

namespace retarget {

inline constexpr int kNumKeypoints = 21;
inline constexpr int kWrist = 0;
inline constexpr int kThumbTip = 4;
inline constexpr int kIndexTip = 8;

/// Robotiq 2F-85 stroke.
inline constexpr double kDefaultApertureMax = 0.085;

struct HandKeypoints21 {
  std::array<Vec3, kNumKeypoints> points{};    // camera frame, meters
  std::array<Vec2, kNumKeypoints> points2d{};  // pixels
  double confidence = 1.0;
  Side side = Side::Left;

  void validate() const;
};

/// Parallel-jaw end-effector state.
struct EEPose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  double grip = 0.0;  // normalized opening in [0, 1]
  Side side = Side::Left;

  bool finite() const;
  /// Same pose expressed through a rigid transform (grip and side unchanged).
  EEPose transformed(const geom::RigidTransform& t) const;
};

struct SmoothingConfig {
  int position_window = 5;
  int orientation_window = 5;
  int grip_window = 3;

  void validate() const;
};

/// Grasp point = thumb/index midpoint; approach axis from the wrist to the
/// grasp point; closing axis along thumb->index, orthogonalized.
/// Throws DegenerateHand when the approach axis is undefined.
EEPose fit_ee_pose(const HandKeypoints21& hand, double aperture_max = kDefaultApertureMax);

/// Centered moving average with windows that shrink symmetrically at the
/// borders. Orientations use the sign-aligned normalized mean.
/// Throws EmptyTrajectory on empty input.
std::vector<EEPose> smooth(std::span<const EEPose> traj, const SmoothingConfig& cfg = {});

}  // namespace retarget
}  // namespace masq
