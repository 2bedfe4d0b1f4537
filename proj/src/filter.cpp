#include "masq/filter.hpp"

#include <sstream>

#include "masq/error.hpp"

namespace masq::filter {

void FilterConfig::validate() const {
  if (!(max_translation > 0.0) || !(max_rotation > 0.0) || !(workspace_radius > 0.0)) {
    throw InvalidArgument("filter thresholds must be positive");
  }
}

const char* reason_name(DropReason r) {
  switch (r) {
    case DropReason::Kept: return "kept";
    case DropReason::CameraMotion: return "camera_motion";
    case DropReason::InvalidAction: return "invalid_action";
    case DropReason::BothHandsMissing: return "both_hands_missing";
  }
  return "unknown";
}

void FilterReport::accumulate(const FilterReport& other) {
  total_frames += other.total_frames;
  kept_frames += other.kept_frames;
  dropped_camera_motion += other.dropped_camera_motion;
  dropped_invalid_action += other.dropped_invalid_action;
  dropped_both_hands_missing += other.dropped_both_hands_missing;
}

std::string FilterReport::to_text() const {
  std::ostringstream os;
  os << "total_frames: " << total_frames << "\n"
     << "kept_frames: " << kept_frames << "\n"
     << "dropped_camera_motion: " << dropped_camera_motion << "\n"
     << "dropped_invalid_action: " << dropped_invalid_action << "\n"
     << "dropped_both_hands_missing: " << dropped_both_hands_missing << "\n";
  return os.str();
}

std::vector<geom::CameraMotion> step_motions(std::span<const geom::CameraModel> cams) {
  std::vector<geom::CameraMotion> out(cams.size());
  for (std::size_t t = 1; t < cams.size(); ++t) {
    out[t] = geom::camera_motion(cams[t - 1].pose, cams[t].pose);
  }
  return out;
}

FilterResult filter_clip(std::span<const geom::CameraMotion> motions,
                         std::span<const labelgen::PosePair> poses, const std::vector<bool>& keep,
                         std::span<const labelgen::HandFlags> sentinel, const FilterConfig& cfg) {
  cfg.validate();
  const std::size_t n = poses.size();
  if (motions.size() != n || keep.size() != n || (!sentinel.empty() && sentinel.size() != n)) {
    throw InvalidArgument("filter inputs are misaligned");
  }
  FilterResult r;
  r.report.total_frames = n;
  r.report.reasons.assign(n, DropReason::Kept);
  for (std::size_t t = 0; t < n; ++t) {
    DropReason reason = DropReason::Kept;
    if (motions[t].translation > cfg.max_translation || motions[t].rotation > cfg.max_rotation) {
      reason = DropReason::CameraMotion;
    } else {
      for (int s = 0; s < 2 && reason == DropReason::Kept; ++s) {
        if (!sentinel.empty() && sentinel[t][s]) continue;
        const auto& p = poses[t][s];
        if (cfg.require_finite && !p.finite()) {
          reason = DropReason::InvalidAction;
        } else if (!(p.position.norm() <= cfg.workspace_radius)) {
          reason = DropReason::InvalidAction;
        }
      }
      if (reason == DropReason::Kept && !keep[t]) reason = DropReason::BothHandsMissing;
    }
    r.report.reasons[t] = reason;
    switch (reason) {
      case DropReason::Kept:
        ++r.report.kept_frames;
        r.retained.push_back(static_cast<int>(t));
        break;
      case DropReason::CameraMotion: ++r.report.dropped_camera_motion; break;
      case DropReason::InvalidAction: ++r.report.dropped_invalid_action; break;
      case DropReason::BothHandsMissing: ++r.report.dropped_both_hands_missing; break;
    }
  }
  return r;
}

}  // namespace masq::filter
