#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "masq/geom.hpp"
#include "masq/labelgen.hpp"

namespace masq::filter {

struct FilterConfig {
  double max_translation = 0.05;  // meters per timestep
  double max_rotation = 0.5;      // radians per timestep
  double workspace_radius = 1.0;  // meters, around the robot base origin
  bool require_finite = true;

  void validate() const;
};

enum class DropReason : std::uint8_t {
  Kept = 0,
  CameraMotion = 1,
  InvalidAction = 2,
  BothHandsMissing = 3,
};

const char* reason_name(DropReason r);

struct FilterReport {
  std::size_t total_frames = 0;
  std::size_t kept_frames = 0;
  std::size_t dropped_camera_motion = 0;
  std::size_t dropped_invalid_action = 0;
  std::size_t dropped_both_hands_missing = 0;
  std::vector<DropReason> reasons;

  bool reconciles() const {
    return kept_frames + dropped_camera_motion + dropped_invalid_action +
               dropped_both_hands_missing == total_frames &&
           reasons.size() == total_frames;
  }
  /// Adds counts (not per-frame reasons) from another report.
  void accumulate(const FilterReport& other);
  /// Line-oriented summary, one "key: value" per line.
  std::string to_text() const;
};

struct FilterResult {
  std::vector<int> retained;
  FilterReport report;
};

/// Per-frame motion from the previous frame; entry 0 is zero motion.
std::vector<geom::CameraMotion> step_motions(std::span<const geom::CameraModel> cams);

/// Drops frames whose incoming camera step exceeds the thresholds (strictly),
/// whose non-sentinel hands are outside the workspace or non-finite, or whose
/// keep flag is false. The first matching reason is recorded.
FilterResult filter_clip(std::span<const geom::CameraMotion> motions,
                         std::span<const labelgen::PosePair> poses, const std::vector<bool>& keep,
                         std::span<const labelgen::HandFlags> sentinel, const FilterConfig& cfg);

}  // namespace masq::filter
