#include "masq/labelgen.hpp"

#include "masq/error.hpp"

namespace masq::labelgen {

void LabelConfig::validate() const {
  if (horizon < 1) throw InvalidArgument("label horizon must be >= 1");
  if (normalize && sentinel.x() >= 0.0 && sentinel.x() <= 1.0 && sentinel.y() >= 0.0 &&
      sentinel.y() <= 1.0) {
    throw InvalidArgument("sentinel must lie outside [0,1]^2 for normalized labels");
  }
}

HomographyLookup HomographyLookup::static_camera() {
  HomographyLookup h;
  h.identity_ = true;
  return h;
}

HomographyLookup HomographyLookup::from_camera_track(std::span<const geom::CameraModel> cams,
                                                     const geom::Plane& plane) {
  HomographyLookup h;
  for (std::size_t k = 0; k + 1 < cams.size(); ++k) {
    const int a = static_cast<int>(k);
    h.set(a + 1, a, geom::plane_induced_homography(cams[k + 1], cams[k], plane));
  }
  return h;
}

std::optional<geom::Homography> HomographyLookup::adjacent(int from, int to) const {
  if (auto it = maps_.find({from, to}); it != maps_.end()) return it->second;
  if (auto it = maps_.find({to, from}); it != maps_.end()) return it->second.inverse();
  return std::nullopt;
}

geom::Homography HomographyLookup::get(int from, int to) const {
  if (identity_ || from == to) return geom::Homography::identity();
  if (auto it = maps_.find({from, to}); it != maps_.end()) return it->second;
  // Chain from -> from-1 -> ... -> to (or upward). Built so that the map
  // nearest `to` is applied last.
  const int step = to < from ? -1 : 1;
  geom::Homography acc;
  for (int k = from; k != to; k += step) {
    auto h = adjacent(k, k + step);
    if (!h) {
      throw MissingHomography("no homography from frame " + std::to_string(k) + " to " +
                              std::to_string(k + step));
    }
    acc = *h * acc;
  }
  return acc;
}

std::vector<LabelPair> make_labels(std::span<const PosePair> ee_traj,
                                   std::span<const geom::CameraModel> cams,
                                   const HomographyLookup& homographies, const LabelConfig& cfg,
                                   std::span<const HandFlags> sentinel) {
  cfg.validate();
  const int n = static_cast<int>(ee_traj.size());
  if (cams.size() != ee_traj.size()) throw InvalidArgument("camera track length mismatch");
  if (!sentinel.empty() && sentinel.size() != ee_traj.size()) {
    throw InvalidArgument("sentinel flag length mismatch");
  }
  const int len = cfg.length();
  std::vector<LabelPair> out(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const auto& cam_t = cams[t];
    for (Side side : kSides) {
      const int s = index_of(side);
      WaypointLabel& label = out[t][s];
      label.side = side;
      label.source_frame = t;
      label.waypoints.assign(static_cast<std::size_t>(len), cfg.sentinel);
      label.valid = false;
      if (!sentinel.empty() && sentinel[t][s]) continue;
      try {
        std::vector<Vec2> pts(static_cast<std::size_t>(len));
        for (int k = 0; k < len; ++k) {
          const int f = std::min(t + k, n - 1);
          const Vec2 px = geom::project_world(ee_traj[f][s].position, cams[f]);
          Vec2 w = geom::warp(homographies.get(f, t), px);
          if (cfg.normalize) w = Vec2(w.x() / cam_t.width, w.y() / cam_t.height);
          pts[k] = w;
        }
        label.waypoints = std::move(pts);
        label.valid = true;
      } catch (const BehindCamera&) {
      } catch (const PointAtInfinity&) {
      }
    }
  }
  return out;
}

MissingHandResult apply_missing_hand_rules(std::span<const HandFlags> presence,
                                           std::span<const PosePair> poses) {
  if (presence.size() != poses.size()) throw InvalidArgument("presence flags misaligned");
  MissingHandResult r;
  const std::size_t n = poses.size();
  r.poses.assign(poses.begin(), poses.end());
  r.keep.assign(n, true);
  r.sentinel.assign(n, HandFlags{false, false});
  std::array<std::optional<EEPose>, 2> last;
  for (std::size_t t = 0; t < n; ++t) {
    for (int s = 0; s < 2; ++s) {
      if (presence[t][s]) {
        last[s] = poses[t][s];
      } else if (last[s]) {
        r.poses[t][s] = *last[s];
      } else {
        r.sentinel[t][s] = true;
      }
    }
    r.keep[t] = !(r.sentinel[t][0] && r.sentinel[t][1]);
  }
  return r;
}

}  // namespace masq::labelgen
