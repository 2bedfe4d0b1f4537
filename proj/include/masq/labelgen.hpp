#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "masq/geom.hpp"
#include "masq/retarget.hpp"

namespace masq::labelgen {

using retarget::EEPose;
using PosePair = std::array<EEPose, 2>;
using HandFlags = std::array<bool, 2>;

struct LabelConfig {
  int horizon = 16;
  bool normalize = true;  // divide pixels by image width / height
  Vec2 sentinel{-1.0, -1.0};

  void validate() const;
  int length() const { return horizon + 1; }
};

/// Waypoints p_t .. p_{t+H} of one arm, expressed in frame t's view.
struct WaypointLabel {
  Side side = Side::Left;
  std::vector<Vec2> waypoints;
  bool valid = false;
  int source_frame = 0;
};

using LabelPair = std::array<WaypointLabel, 2>;

/// Frame-to-frame homographies. A map from frame `a` to frame `b` is looked
/// up directly, otherwise chained through adjacent-frame maps (inverting an
/// adjacent map when only the opposite direction is stored).
class HomographyLookup {
 public:
  HomographyLookup() = default;

  /// Every frame shares one view; all lookups return identity.
  static HomographyLookup static_camera();
  /// Adjacent maps (k+1 -> k) induced by `plane` through the camera track.
  static HomographyLookup from_camera_track(std::span<const geom::CameraModel> cams,
                                           const geom::Plane& plane);

  void set(int from, int to, const geom::Homography& h) { maps_[{from, to}] = h; }
  /// Maps pixels of frame `from` into pixels of frame `to`.
  /// Throws MissingHomography when no direct or chained route exists.
  geom::Homography get(int from, int to) const;
  std::size_t size() const { return maps_.size(); }

 private:
  std::optional<geom::Homography> adjacent(int from, int to) const;

  bool identity_ = false;
  std::map<std::pair<int, int>, geom::Homography> maps_;
};

/// Horizon-H labels for every frame and arm. Hands flagged in `sentinel`
/// (per frame) get sentinel waypoints and valid = false. When t + k runs past
/// the clip, the final available waypoint is repeated.
std::vector<LabelPair> make_labels(std::span<const PosePair> ee_traj,
                                   std::span<const geom::CameraModel> cams,
                                   const HomographyLookup& homographies, const LabelConfig& cfg,
                                   std::span<const HandFlags> sentinel = {});

struct MissingHandResult {
  std::vector<PosePair> poses;     // patched
  std::vector<bool> keep;          // false: both hands missing with no history
  std::vector<HandFlags> sentinel; // hand has no pose to reuse at this frame
};

/// Last-visible reuse for occluded hands, sentinel for hands with no visible
/// history, and discard for frames where neither hand has any.
MissingHandResult apply_missing_hand_rules(std::span<const HandFlags> presence,
                                           std::span<const PosePair> poses);

}  // namespace masq::labelgen
