#include "masq/robotize.hpp"

#include <sstream>

#include "masq/error.hpp"

namespace masq::robotize {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double num(const std::map<std::string, std::string>& m, const std::string& key, double fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad value for " + key + ": " + it->second);
  }
}

}  // namespace

void RobotizeConfig::validate() const {
  if (!(aperture_max > 0)) throw InvalidArgument("aperture_max must be positive");
  if (match_noise < 0) throw InvalidArgument("match_noise must be nonnegative");
  smoothing.validate();
  labels.validate();
  filter.validate();
  world.validate();
}

std::map<std::string, std::string> RobotizeConfig::to_map() const {
  std::map<std::string, std::string> m{
      {"aperture_max", fmt(aperture_max)},
      {"smoothing.position_window", std::to_string(smoothing.position_window)},
      {"smoothing.orientation_window", std::to_string(smoothing.orientation_window)},
      {"smoothing.grip_window", std::to_string(smoothing.grip_window)},
      {"labels.horizon", std::to_string(labels.horizon)},
      {"labels.normalize", labels.normalize ? "1" : "0"},
      {"filter.max_translation", fmt(filter.max_translation)},
      {"filter.max_rotation", fmt(filter.max_rotation)},
      {"filter.workspace_radius", fmt(filter.workspace_radius)},
      {"homography", homography == HomographyMode::Plane ? "plane" : "estimated"},
      {"match_noise", fmt(match_noise)},
      {"overlay", overlay ? "1" : "0"},
  };
  for (const auto& [k, v] : world.to_map()) m["world." + k] = v;
  return m;
}

void RobotizeConfig::apply(const std::map<std::string, std::string>& m) {
  aperture_max = num(m, "aperture_max", aperture_max);
  smoothing.position_window = static_cast<int>(num(m, "smoothing.position_window", smoothing.position_window));
  smoothing.orientation_window =
      static_cast<int>(num(m, "smoothing.orientation_window", smoothing.orientation_window));
  smoothing.grip_window = static_cast<int>(num(m, "smoothing.grip_window", smoothing.grip_window));
  labels.horizon = static_cast<int>(num(m, "labels.horizon", labels.horizon));
  labels.normalize = num(m, "labels.normalize", labels.normalize) != 0;
  filter.max_translation = num(m, "filter.max_translation", filter.max_translation);
  filter.max_rotation = num(m, "filter.max_rotation", filter.max_rotation);
  filter.workspace_radius = num(m, "filter.workspace_radius", filter.workspace_radius);
  if (auto it = m.find("homography"); it != m.end()) {
    if (it->second == "plane") {
      homography = HomographyMode::Plane;
    } else if (it->second == "estimated") {
      homography = HomographyMode::Estimated;
    } else {
      throw FormatError("unknown homography mode " + it->second);
    }
  }
  match_noise = num(m, "match_noise", match_noise);
  overlay = num(m, "overlay", overlay) != 0;
  std::map<std::string, std::string> w;
  for (const auto& [k, v] : m)
    if (k.rfind("world.", 0) == 0) w[k.substr(6)] = v;
  world.apply(w);
}

Trajectory retarget_clip(const dataset::ClipBundle& clip, const RobotizeConfig& cfg) {
  if (!clip.has_hands()) throw InvalidArgument("clip " + clip.clip_id + " carries no hand keypoints");
  const int n = clip.frames();
  std::vector<labelgen::PosePair> raw(static_cast<std::size_t>(n));
  Trajectory out;
  out.presence.assign(static_cast<std::size_t>(n), {false, false});
  for (int t = 0; t < n; ++t) {
    const auto flags = dataset::presence_at(clip, t);
    const auto to_world = dataset::camera_at(clip, t).pose.inverse();
    for (Side side : kSides) {
      const int s = index_of(side);
      raw[t][s].side = side;
      if (!flags[s]) continue;
      try {
        raw[t][s] = retarget::fit_ee_pose(dataset::hand_at(clip, t, side), cfg.aperture_max)
                        .transformed(to_world);
        out.presence[t][s] = true;
      } catch (const DegenerateHand&) {
        // Treated like an occlusion.
      }
    }
  }
  out.patched = labelgen::apply_missing_hand_rules(out.presence, raw);

  // Smooth each hand over the frames that have a pose (everything after its
  // first sighting, gaps already filled by the last visible pose).
  for (int s = 0; s < 2; ++s) {
    int first = 0;
    while (first < n && out.patched.sentinel[first][s]) ++first;
    if (first >= n) continue;
    std::vector<retarget::EEPose> seq;
    for (int t = first; t < n; ++t) seq.push_back(out.patched.poses[t][s]);
    const auto smoothed = retarget::smooth(seq, cfg.smoothing);
    for (int t = first; t < n; ++t) out.patched.poses[t][s] = smoothed[t - first];
  }
  return out;
}

labelgen::HomographyLookup clip_homographies(const dataset::ClipBundle& clip, const RobotizeConfig& cfg) {
  const auto cams = dataset::camera_track(clip);
  const auto plane = dataset::plane_of(clip);
  if (!plane) throw InvalidArgument("clip " + clip.clip_id + " has no scene plane");
  if (cfg.homography == HomographyMode::Plane) {
    return labelgen::HomographyLookup::from_camera_track(cams, *plane);
  }
  // Simulated feature matches: a grid on the plane seen from both frames,
  // perturbed by pixel noise, fitted with RANSAC.
  labelgen::HomographyLookup lookup;
  Rng rng(derive_seed(clip.seed, 0x686f6d));
  const Vec3 n = plane->normal.normalized();
  const Vec3 origin = n * plane->offset;
  const Vec3 u = (std::abs(n.z()) < 0.9 ? n.cross(Vec3::UnitZ()) : n.cross(Vec3::UnitX())).normalized();
  const Vec3 v = n.cross(u);
  for (std::size_t k = 0; k + 1 < cams.size(); ++k) {
    std::vector<Vec2> src, dst;
    for (int i = -4; i <= 4; ++i) {
      for (int j = -4; j <= 4; ++j) {
        const Vec3 p = origin + Vec3(0.0, 0.45, 0.0) + 0.1 * i * u + 0.06 * j * v;
        try {
          Vec2 a = geom::project_world(p, cams[k + 1]);
          Vec2 b = geom::project_world(p, cams[k]);
          a += Vec2(rng.normal(), rng.normal()) * cfg.match_noise;
          b += Vec2(rng.normal(), rng.normal()) * cfg.match_noise;
          src.push_back(a);
          dst.push_back(b);
        } catch (const BehindCamera&) {
        }
      }
    }
    geom::RansacOptions opt;
    opt.seed = derive_seed(clip.seed, k);
    opt.inlier_threshold = std::max(2.0, 4.0 * cfg.match_noise);
    lookup.set(static_cast<int>(k + 1), static_cast<int>(k), geom::estimate_homography_ransac(src, dst, opt).homography);
  }
  return lookup;
}

void label_clip(dataset::ClipBundle& clip, const Trajectory& traj, const RobotizeConfig& cfg) {
  const auto cams = dataset::camera_track(clip);
  const auto hs = clip_homographies(clip, cfg);
  const auto labels = labelgen::make_labels(traj.patched.poses, cams, hs, cfg.labels, traj.patched.sentinel);
  dataset::set_labels(clip, labels, cfg.labels.horizon);
}

filter::FilterResult filter_clip(dataset::ClipBundle& clip, const Trajectory& traj,
                                 const RobotizeConfig& cfg) {
  const auto motions = filter::step_motions(dataset::camera_track(clip));
  auto result = filter::filter_clip(motions, traj.patched.poses, traj.patched.keep, traj.patched.sentinel,
                                    cfg.filter);
  clip.keep = dataset::FloatArray(static_cast<std::uint32_t>(clip.frames()), 1);
  for (int t : result.retained) clip.keep.at(static_cast<std::size_t>(t), 0) = 1.f;
  return result;
}

void overlay_clip(dataset::ClipBundle& clip, const Trajectory& traj, const RobotizeConfig& cfg) {
  const simenv::FeatureModel model(cfg.world);
  if (clip.feature_dim() != cfg.world.feature_dim()) {
    throw DimensionMismatch("clip features do not match the world configuration");
  }
  const int e0 = model.e_offset();
  for (int t = 0; t < clip.frames(); ++t) {
    simenv::EnvState s;
    std::array<bool, 2> drawn{};
    for (int a = 0; a < 2; ++a) {
      const auto& p = traj.patched.poses[t][a];
      drawn[a] = !traj.patched.sentinel[t][a];
      s.arms[a].pos = p.position.head<2>();
      s.arms[a].grip = p.grip;
    }
    const auto e = model.appearance(s, dataset::camera_at(clip, t), simenv::Embodiment::RobotOverlay,
                                    clip.scene_style, drawn);
    for (int i = 0; i < e.size(); ++i) clip.features.at(t, e0 + i) = static_cast<float>(e(i));
  }
  clip.embodiment = static_cast<std::int32_t>(simenv::Embodiment::RobotOverlay);
}

filter::FilterReport robotize_clip(dataset::ClipBundle& clip, const RobotizeConfig& cfg) {
  cfg.validate();
  const auto traj = retarget_clip(clip, cfg);
  label_clip(clip, traj, cfg);
  auto result = filter_clip(clip, traj, cfg);
  if (cfg.overlay) overlay_clip(clip, traj, cfg);
  clip.validate();
  return result.report;
}

}  // namespace masq::robotize
