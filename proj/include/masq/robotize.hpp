#pragma once

#include <map>
#include <string>
#include <vector>

#include "masq/dataset.hpp"
#include "masq/filter.hpp"
#include "masq/labelgen.hpp"
#include "masq/retarget.hpp"
#include "masq/simenv.hpp"

namespace masq::robotize {

// Turns a raw human clip (hands, camera track, plane) into training data:
// world-frame EE trajectories, horizon labels in each frame's view, keep
// flags, and optionally the robot overlay in place of the hand appearance.

enum class HomographyMode { Plane, Estimated };

struct RobotizeConfig {
  double aperture_max = retarget::kDefaultApertureMax;
  retarget::SmoothingConfig smoothing;
  labelgen::LabelConfig labels;
  filter::FilterConfig filter;
  HomographyMode homography = HomographyMode::Plane;
  double match_noise = 0.5;  // pixel noise on simulated matches (Estimated mode)
  bool overlay = true;       // replace the arm appearance with the robot rendering
  simenv::WorldConfig world;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  void apply(const std::map<std::string, std::string>& m);
};

struct Trajectory {
  std::vector<labelgen::HandFlags> presence;  // hand detected and retargetable
  labelgen::MissingHandResult patched;        // world-frame poses after smoothing and the missing-hand rules
};

/// Retargets every detected hand, moves it to the world frame, applies the
/// missing-hand rules and smooths each hand from its first sighting on.
Trajectory retarget_clip(const dataset::ClipBundle& clip, const RobotizeConfig& cfg);

/// Adjacent-frame homographies for the clip's camera track.
labelgen::HomographyLookup clip_homographies(const dataset::ClipBundle& clip, const RobotizeConfig& cfg);

/// Writes labels (and nothing else) into `clip`.
void label_clip(dataset::ClipBundle& clip, const Trajectory& traj, const RobotizeConfig& cfg);

/// Writes the keep column into `clip` and returns the per-frame decisions.
filter::FilterResult filter_clip(dataset::ClipBundle& clip, const Trajectory& traj,
                                 const RobotizeConfig& cfg);

/// Replaces the arm block of every frame by the robot rendered at the
/// retargeted pose (or zero for hands not yet seen).
void overlay_clip(dataset::ClipBundle& clip, const Trajectory& traj, const RobotizeConfig& cfg);

/// Full pipeline in place. Returns the filter report for the clip.
filter::FilterReport robotize_clip(dataset::ClipBundle& clip, const RobotizeConfig& cfg);

}  // namespace masq::robotize
