#include "masq/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

#include "masq/error.hpp"
#include "masq/retarget.hpp"

namespace masq::simenv {

namespace {

constexpr std::array<const char*, 3> kTaskNames{"stack-pots", "scrape-potato", "sweep-chilis"};

// Object layouts per task. Index order matters: when several graspable
// objects are within reach, the highest index (the one on top) is taken.
enum StackObj { kLargePot = 0, kMediumPot = 1, kSmallPot = 2 };
enum ScrapeObj { kPlate = 0, kSpatula = 1, kPot = 2 };
enum SweepObj { kBowl = 0, kSponge = 1, kChili1 = 2, kChili2 = 3 };

constexpr double kArrive = 0.015;
constexpr double kCaptureRadius = 0.05;

bool graspable(Task task, int obj) {
  switch (task) {
    case Task::StackPots: return obj != kLargePot;
    case Task::ScrapePotato: return obj != kPot;
    case Task::SweepChilis: return obj == kBowl || obj == kSponge;
  }
  return false;
}

Vec2 stack_drop(const EnvState& s) { return s.objects[kLargePot] + Vec2(0.05, -0.14); }
Vec2 serve_spot(const EnvState& s) { return s.objects[kPot] + Vec2(-0.12, -0.1); }
Vec2 bowl_edge(const EnvState& s) { return {-0.36, s.objects[kBowl].y()}; }

bool held_by(const EnvState& s, int arm, int obj) { return s.arms[arm].held == obj; }
bool is_held(const EnvState& s, int obj) { return held_by(s, 0, obj) || held_by(s, 1, obj); }

Vec2 clamp_table(const Vec2& p) {
  return {std::clamp(p.x(), kTableXMin, kTableXMax), std::clamp(p.y(), kTableYMin, kTableYMax)};
}

template <class T>
T lookup(const std::map<std::string, std::string>& m, const std::string& key, T fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  std::istringstream is(it->second);
  T v{};
  is >> v;
  if (is.fail()) throw FormatError("bad value for " + key + ": " + it->second);
  return v;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const char* task_name(Task t) { return kTaskNames[static_cast<int>(t)]; }

Task parse_task(const std::string& s) {
  for (Task t : kTasks)
    if (s == task_name(t)) return t;
  throw InvalidArgument("unknown task '" + s + "'");
}

const char* embodiment_name(Embodiment e) {
  return e == Embodiment::HandAppearance ? "hand" : "overlay";
}

Embodiment parse_embodiment(const std::string& s) {
  if (s == "hand") return Embodiment::HandAppearance;
  if (s == "overlay") return Embodiment::RobotOverlay;
  throw InvalidArgument("unknown embodiment '" + s + "'");
}

std::string task_description(Task t) { return task_phrases(t).front(); }

const std::vector<std::string>& task_phrases(Task t) {
  static const std::array<std::vector<std::string>, 3> phrases{{
      {"lift the small pot out of the large pot, put the medium pot in the large pot, then the "
       "small pot in the medium pot",
       "nest the pots", "stack the pots inside each other", "take out the little pot and stack them",
       "put the pots away one inside the other"},
      {"pick up the plate, pick up the spatula, scrape the potato into the pot",
       "scrape the plate into the pot", "serve the potato from the plate",
       "use the spatula to push food off the plate", "clear the plate into the pot"},
      {"move the bowl to the edge, pick up the sponge, sweep the chilis into the bowl",
       "sweep the chilis", "wipe the chilis into the bowl", "clean up the chilis with the sponge",
       "brush the peppers into the bowl"},
  }};
  return phrases[static_cast<int>(t)];
}

const std::vector<std::string>& object_names(Task t) {
  static const std::array<std::vector<std::string>, 3> names{{
      {"large_pot", "medium_pot", "small_pot"},
      {"plate", "spatula", "pot"},
      {"bowl", "sponge", "chili_1", "chili_2"},
  }};
  return names[static_cast<int>(t)];
}

Vec2 rest_position(int arm) { return arm == 0 ? Vec2(-0.3, 0.25) : Vec2(0.3, 0.25); }

bool Box::contains(const Vec2& p) const {
  return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
}

Vec2 Box::sample(Rng& rng) const {
  const double x = rng.uniform(lo.x(), hi.x());
  const double y = rng.uniform(lo.y(), hi.y());
  return {x, y};
}

// ---------------------------------------------------------------------------
// Configs

std::map<std::string, std::string> WorldConfig::to_map() const {
  return {{"world_seed", std::to_string(world_seed)},
          {"geometry_dim", std::to_string(geometry_dim)},
          {"arm_dim", std::to_string(arm_dim)},
          {"style_block_dim", std::to_string(style_block_dim)},
          {"style_dim", std::to_string(style_dim)},
          {"style_scale", fmt(style_scale)},
          {"lighting_gain", fmt(lighting_gain)},
          {"lighting_rank", std::to_string(lighting_rank)},
          {"feature_noise", fmt(feature_noise)},
          {"embed_dim", std::to_string(embed_dim)}};
}

void WorldConfig::apply(const std::map<std::string, std::string>& m) {
  world_seed = lookup(m, "world_seed", world_seed);
  geometry_dim = lookup(m, "geometry_dim", geometry_dim);
  arm_dim = lookup(m, "arm_dim", arm_dim);
  style_block_dim = lookup(m, "style_block_dim", style_block_dim);
  style_dim = lookup(m, "style_dim", style_dim);
  style_scale = lookup(m, "style_scale", style_scale);
  lighting_gain = lookup(m, "lighting_gain", lighting_gain);
  lighting_rank = lookup(m, "lighting_rank", lighting_rank);
  feature_noise = lookup(m, "feature_noise", feature_noise);
  embed_dim = lookup(m, "embed_dim", embed_dim);
}

void WorldConfig::validate() const {
  if (geometry_dim < 1 || arm_dim < 1 || style_block_dim < 1 || style_dim < 1 || embed_dim < 1) {
    throw InvalidArgument("world feature dimensions must be positive");
  }
  if (lighting_rank < 1 || lighting_rank > style_dim) {
    throw InvalidArgument("lighting_rank must be within 1..style_dim");
  }
  if (style_scale < 0 || lighting_gain < 0 || feature_noise < 0) {
    throw InvalidArgument("world gains must be nonnegative");
  }
}

geom::CameraModel CameraConfig::nominal() const {
  return geom::CameraModel::look_at(eye, target, focal, focal, width, height);
}

SceneConfig SceneConfig::defaults(Task task, int scene_style) {
  SceneConfig s;
  s.task = task;
  s.scene_style = scene_style;
  switch (task) {
    case Task::StackPots:
      s.regions = {{{-0.2, 0.35}, {-0.05, 0.5}},   // large pot
                   {{0.1, 0.45}, {0.25, 0.6}},     // medium pot
                   {{-0.2, 0.35}, {-0.05, 0.5}}};  // small pot starts inside the large one
      break;
    case Task::ScrapePotato:
      s.regions = {{{-0.35, 0.35}, {-0.2, 0.55}},  // plate
                   {{0.2, 0.35}, {0.35, 0.55}},    // spatula
                   {{-0.05, 0.55}, {0.1, 0.65}}};  // pot
      break;
    case Task::SweepChilis:
      s.regions = {{{-0.15, 0.45}, {0.0, 0.6}},    // bowl
                   {{0.2, 0.3}, {0.35, 0.45}},     // sponge
                   {{0.0, 0.3}, {0.1, 0.38}},      // chili 1
                   {{0.06, 0.42}, {0.15, 0.5}}};   // chili 2
      break;
  }
  return s;
}

void SceneConfig::validate() const {
  world.validate();
  if (regions.size() != object_names(task).size()) {
    throw InvalidArgument(std::string("task ") + task_name(task) + " needs " +
                          std::to_string(object_names(task).size()) + " object regions");
  }
  const Box table{{kTableXMin, kTableYMin}, {kTableXMax, kTableYMax}};
  for (const auto& r : regions) {
    if (!(r.lo.x() <= r.hi.x() && r.lo.y() <= r.hi.y()) || !table.contains(r.lo) ||
        !table.contains(r.hi)) {
      throw InvalidArgument("object region outside the workspace");
    }
  }
  if (scene_style < 0) throw InvalidArgument("scene style must be nonnegative");
  if (max_steps < 1) throw InvalidArgument("max_steps must be positive");
}

std::string SceneConfig::to_text() const {
  std::ostringstream os;
  os << "task = " << task_name(task) << "\n";
  os << "scene_style = " << scene_style << "\n";
  os << "embodiment = " << embodiment_name(embodiment) << "\n";
  os << "max_steps = " << max_steps << "\n";
  os << "seed = " << seed << "\n";
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    os << "region." << object_names(task)[i] << " = " << fmt(r.lo.x()) << " " << fmt(r.lo.y()) << " "
       << fmt(r.hi.x()) << " " << fmt(r.hi.y()) << "\n";
  }
  os << "camera.eye = " << fmt(camera.eye.x()) << " " << fmt(camera.eye.y()) << " " << fmt(camera.eye.z()) << "\n";
  os << "camera.target = " << fmt(camera.target.x()) << " " << fmt(camera.target.y()) << " "
     << fmt(camera.target.z()) << "\n";
  os << "camera.focal = " << fmt(camera.focal) << "\n";
  os << "camera.width = " << fmt(camera.width) << "\n";
  os << "camera.height = " << fmt(camera.height) << "\n";
  os << "camera.clip_offset = " << fmt(camera.clip_offset) << "\n";
  os << "camera.step_translation = " << fmt(camera.step_translation) << "\n";
  os << "camera.step_rotation = " << fmt(camera.step_rotation) << "\n";
  os << "camera.jolt_fraction = " << fmt(camera.jolt_fraction) << "\n";
  os << "camera.jolt_translation = " << fmt(camera.jolt_translation) << "\n";
  for (const auto& [k, v] : world.to_map()) os << "world." << k << " = " << v << "\n";
  return os.str();
}

SceneConfig SceneConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("scene config line without '=': " + line);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (!kv.count("task")) throw FormatError("scene config needs a task");
  SceneConfig s = defaults(parse_task(kv["task"]), lookup(kv, "scene_style", 0));
  if (kv.count("embodiment")) s.embodiment = parse_embodiment(kv["embodiment"]);
  s.max_steps = lookup(kv, "max_steps", s.max_steps);
  s.seed = lookup<std::uint64_t>(kv, "seed", s.seed);
  const auto& names = object_names(s.task);
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = kv.find("region." + names[i]);
    if (it == kv.end()) continue;
    std::istringstream r(it->second);
    Box b;
    r >> b.lo.x() >> b.lo.y() >> b.hi.x() >> b.hi.y();
    if (r.fail()) throw FormatError("bad region for " + names[i]);
    s.regions[i] = b;
  }
  auto vec3 = [&](const char* key, Vec3& out) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    std::istringstream r(it->second);
    r >> out.x() >> out.y() >> out.z();
    if (r.fail()) throw FormatError(std::string("bad vector for ") + key);
  };
  vec3("camera.eye", s.camera.eye);
  vec3("camera.target", s.camera.target);
  s.camera.focal = lookup(kv, "camera.focal", s.camera.focal);
  s.camera.width = lookup(kv, "camera.width", s.camera.width);
  s.camera.height = lookup(kv, "camera.height", s.camera.height);
  s.camera.clip_offset = lookup(kv, "camera.clip_offset", s.camera.clip_offset);
  s.camera.step_translation = lookup(kv, "camera.step_translation", s.camera.step_translation);
  s.camera.step_rotation = lookup(kv, "camera.step_rotation", s.camera.step_rotation);
  s.camera.jolt_fraction = lookup(kv, "camera.jolt_fraction", s.camera.jolt_fraction);
  s.camera.jolt_translation = lookup(kv, "camera.jolt_translation", s.camera.jolt_translation);
  std::map<std::string, std::string> world;
  for (const auto& [k, v] : kv)
    if (k.rfind("world.", 0) == 0) world[k.substr(6)] = v;
  s.world.apply(world);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Actions and stepping

Vec2 normalize_xy(const Vec2& w) { return {w.x() / 0.5, (w.y() - 0.45) / 0.3}; }
Vec2 denormalize_xy(const Vec2& n) { return {n.x() * 0.5, n.y() * 0.3 + 0.45}; }

Action make_action(const Vec2& left, double left_grip, const Vec2& right, double right_grip) {
  const Vec2 l = normalize_xy(left);
  const Vec2 r = normalize_xy(right);
  return {l.x(), l.y(), left_grip, r.x(), r.y(), right_grip};
}

Action hold_action(const EnvState& s) {
  return make_action(s.arms[0].pos, s.arms[0].grip, s.arms[1].pos, s.arms[1].grip);
}

Env::Env(const SceneConfig& scene) : scene_(scene) { scene_.validate(); }

void Env::reset(std::uint64_t seed) {
  Rng rng(seed);
  state_ = {};
  const std::size_t n = scene_.regions.size();
  state_.objects.resize(n);
  for (std::size_t i = 0; i < n; ++i) state_.objects[i] = scene_.regions[i].sample(rng);
  if (scene_.task == Task::StackPots) state_.objects[kSmallPot] = state_.objects[kLargePot];
  state_.captured.assign(n, false);
  for (int a = 0; a < 2; ++a) {
    state_.arms[a].pos = rest_position(a) + Vec2(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02));
    state_.arms[a].grip = 1.0;
    state_.arms[a].held = -1;
  }
  for (int k = 0; k < kSubtasks; ++k) state_.last_predicate[k] = predicate(k);
}

void Env::step(const Action& a) {
  auto& s = state_;
  for (int i = 0; i < 2; ++i) {
    auto& arm = s.arms[i];
    const Vec2 target = denormalize_xy({a[3 * i], a[3 * i + 1]});
    Vec2 delta = target - arm.pos;
    if (!delta.allFinite()) delta.setZero();
    const double d = delta.norm();
    if (d > kMaxStep) delta *= kMaxStep / d;
    arm.pos = clamp_table(arm.pos + delta);
    const double prev_grip = arm.grip;
    const double g = std::isfinite(a[3 * i + 2]) ? a[3 * i + 2] : prev_grip;
    arm.grip = std::clamp(g, 0.0, 1.0);
    if (arm.held >= 0 && arm.grip >= 0.5) {
      arm.held = -1;
    } else if (arm.held < 0 && prev_grip >= 0.5 && arm.grip < 0.5) {
      // Closing: take the topmost free graspable object within reach.
      for (int o = static_cast<int>(s.objects.size()) - 1; o >= 0; --o) {
        if (!graspable(scene_.task, o) || is_held(s, o)) continue;
        if ((s.objects[o] - arm.pos).norm() <= kGraspRadius) {
          arm.held = o;
          break;
        }
      }
    }
    if (arm.held >= 0) s.objects[arm.held] = arm.pos;
  }
  if (scene_.task == Task::SweepChilis) {
    if (is_held(s, kSponge)) {
      for (int c = kChili1; c <= kChili2; ++c) {
        if (!s.captured[c] && (s.objects[c] - s.objects[kSponge]).norm() <= kCaptureRadius) {
          s.captured[c] = true;
        }
        if (s.captured[c]) s.objects[c] = s.objects[kSponge];
      }
    } else {
      std::fill(s.captured.begin(), s.captured.end(), false);
    }
  }
  ++s.steps;
  update_credit();
}

bool Env::predicate(int k) const {
  const auto& s = state_;
  const auto& o = s.objects;
  switch (scene_.task) {
    case Task::StackPots:
      if (k == 0) return !is_held(s, kSmallPot) && (o[kSmallPot] - o[kLargePot]).norm() > 0.12;
      if (k == 1) return !is_held(s, kMediumPot) && (o[kMediumPot] - o[kLargePot]).norm() < 0.04;
      return !is_held(s, kSmallPot) && (o[kSmallPot] - o[kMediumPot]).norm() < 0.04;
    case Task::ScrapePotato:
      if (k == 0) return held_by(s, 0, kPlate) && (o[kPlate] - serve_spot(s)).norm() < 0.06;
      if (k == 1) return held_by(s, 0, kPlate) && held_by(s, 1, kSpatula);
      return held_by(s, 0, kPlate) && held_by(s, 1, kSpatula) && (o[kSpatula] - o[kPlate]).norm() < 0.05;
    case Task::SweepChilis:
      if (k == 0) return !is_held(s, kBowl) && o[kBowl].x() < -0.3;
      if (k == 1) return held_by(s, 1, kSponge);
      return (o[kChili1] - o[kBowl]).norm() < 0.06 && (o[kChili2] - o[kBowl]).norm() < 0.06;
  }
  return false;
}

void Env::update_credit() {
  // A subtask is credited when its predicate switches on while every earlier
  // subtask is already credited. Satisfying it early does not count.
  std::array<bool, kSubtasks> now{};
  for (int k = 0; k < kSubtasks; ++k) now[k] = predicate(k);
  const int next = completed();
  if (next < kSubtasks && now[next] && !state_.last_predicate[next]) state_.done[next] = true;
  state_.last_predicate = now;
}

int Env::completed() const {
  int k = 0;
  while (k < kSubtasks && state_.done[k]) ++k;
  return k;
}

// ---------------------------------------------------------------------------
// Appearance

Vec2 image_coords(const Vec3& world, const geom::CameraModel& cam) {
  const Vec2 px = geom::project_world(world, cam);
  return {2.0 * px.x() / cam.width - 1.0, 2.0 * px.y() / cam.height - 1.0};
}

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = sd * rng.normal();
  return m;
}

}  // namespace

FeatureModel::FeatureModel(const WorldConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg.world_seed, 1));
  w_geom_ = gaussian(cfg.geometry_dim, 2 * kMaxObjects, 1.2, rng);
  b_geom_ = gaussian(cfg.geometry_dim, 1, 0.3, rng).col(0);
  for (int e = 0; e < 2; ++e) {
    arm_proj_[e] = gaussian(cfg.arm_dim, 4, 1.0, rng);
    lighting_[e] = gaussian(2 * cfg.arm_dim, cfg.lighting_rank, 1.0 / std::sqrt(cfg.lighting_rank), rng);
  }
  background_ = gaussian(cfg.style_block_dim, cfg.style_dim, 1.0 / std::sqrt(cfg.style_dim), rng);
}

Eigen::VectorXd FeatureModel::style_vector(int style) const {
  Rng rng(derive_seed(derive_seed(cfg_.world_seed, 2), static_cast<std::uint64_t>(style)));
  return gaussian(cfg_.style_dim, 1, 1.0, rng).col(0);
}

Eigen::VectorXd FeatureModel::geometry(const EnvState& s, const geom::CameraModel& cam) const {
  Eigen::VectorXd in = Eigen::VectorXd::Zero(2 * kMaxObjects);
  for (std::size_t i = 0; i < s.objects.size() && i < std::size_t(kMaxObjects); ++i) {
    const Vec2 uv = image_coords({s.objects[i].x(), s.objects[i].y(), 0.0}, cam);
    in(2 * i) = uv.x();
    in(2 * i + 1) = uv.y();
  }
  return (w_geom_ * in + b_geom_).array().tanh().matrix();
}

Eigen::VectorXd FeatureModel::appearance(const EnvState& s, const geom::CameraModel& cam,
                                         Embodiment emb, int style,
                                         std::array<bool, 2> arm_visible) const {
  const int e = static_cast<int>(emb);
  // Shading follows the leading style components.
  Eigen::VectorXd out = cfg_.lighting_gain * (lighting_[e] * style_vector(style).head(cfg_.lighting_rank));
  for (int a = 0; a < 2; ++a) {
    auto block = out.segment(a * cfg_.arm_dim, cfg_.arm_dim);
    if (!arm_visible[a]) {
      block.setZero();
      continue;
    }
    const auto& arm = s.arms[a];
    const Vec2 uv = image_coords({arm.pos.x(), arm.pos.y(), kEEHeight}, cam);
    const Eigen::Vector4d in(uv.x(), uv.y(), 2.0 * arm.grip - 1.0, 1.0);
    block += (arm_proj_[e] * in).array().tanh().matrix();
  }
  return out;
}

Eigen::VectorXd FeatureModel::background(int style) const {
  return cfg_.style_scale * (background_ * style_vector(style));
}

Eigen::VectorXd FeatureModel::features(const EnvState& s, const geom::CameraModel& cam,
                                       Embodiment emb, int style, Rng* rng,
                                       std::array<bool, 2> arm_visible) const {
  Eigen::VectorXd f(cfg_.feature_dim());
  f.head(cfg_.geometry_dim) = geometry(s, cam);
  f.segment(e_offset(), 2 * cfg_.arm_dim) = appearance(s, cam, emb, style, arm_visible);
  f.tail(cfg_.style_block_dim) = background(style);
  if (rng && cfg_.feature_noise > 0) {
    for (int i = 0; i < cfg_.geometry_dim; ++i) f(i) += cfg_.feature_noise * rng->normal();
    for (int i = s_offset(); i < f.size(); ++i) f(i) += cfg_.feature_noise * rng->normal();
  }
  return f;
}

// ---------------------------------------------------------------------------
// Expert

Expert::Expert(Task task, std::uint64_t seed, const ExpertNoise& noise, int stop_after)
    : task_(task), rng_(seed), noise_(noise), stop_after_(stop_after) {
  speed_ = rng_.uniform(noise.speed_min, noise.speed_max);
  for (auto& o : offsets_) o = Vec2(noise.target_sd * rng_.normal(), noise.target_sd * rng_.normal());
}

Action Expert::act(const EnvState& s) {
  int phase = 0;
  while (phase < kSubtasks && s.done[phase]) ++phase;
  if (phase >= stop_after_ || phase >= kSubtasks) return hold_action(s);

  std::array<Vec2, 2> cmd{rest_position(0), rest_position(1)};
  std::array<double, 2> grip{1.0, 1.0};
  for (int a = 0; a < 2; ++a) {
    // Keep any held object unless the plan below says otherwise.
    if (s.arms[a].held >= 0) grip[a] = 0.0;
  }
  int step_id = 0;
  auto reach = [&](int arm, const Vec2& target) {
    const Vec2 t = target + offsets_[step_id++ % offsets_.size()];
    cmd[arm] = t;
    return (s.arms[arm].pos - t).norm() < kArrive;
  };
  // Pick `obj` with `arm`, bring it to `dest`; release there when `release`.
  auto pick = [&](int arm, int obj, const Vec2& dest, bool release) {
    const auto& st = s.arms[arm];
    if (st.held == obj) {
      const bool there = reach(arm, dest);
      step_id++;
      grip[arm] = there && release ? 1.0 : 0.0;
      if (there && !release) cmd[arm] = st.pos;
    } else if (st.held >= 0) {
      cmd[arm] = st.pos;
      grip[arm] = 1.0;
    } else {
      step_id++;
      const bool there = reach(arm, s.objects[obj]);
      grip[arm] = there ? 0.0 : 1.0;
      if (there) cmd[arm] = st.pos;
    }
  };

  switch (task_) {
    case Task::StackPots:
      if (phase == 0) {
        step_id = 0;
        pick(1, kSmallPot, stack_drop(s), true);
      } else if (phase == 1) {
        step_id = 2;
        pick(0, kMediumPot, s.objects[kLargePot], true);
      } else {
        step_id = 4;
        pick(1, kSmallPot, s.objects[kMediumPot], true);
      }
      break;
    case Task::ScrapePotato:
      step_id = 0;
      pick(0, kPlate, serve_spot(s), false);
      if (phase >= 1) {
        // Plate stays where it is while the other hand works.
        if (s.arms[0].held == kPlate) cmd[0] = s.arms[0].pos, grip[0] = 0.0;
        step_id = 2;
        if (phase == 1 || s.arms[1].held != kSpatula) {
          pick(1, kSpatula, s.arms[1].pos, false);
        } else {
          step_id = 4;
          pick(1, kSpatula, s.objects[kPlate] + Vec2(0.02, 0.0), false);
        }
      }
      break;
    case Task::SweepChilis:
      if (phase == 0) {
        step_id = 0;
        pick(0, kBowl, bowl_edge(s), true);
      } else {
        step_id = 2;
        if (s.arms[1].held != kSponge || phase == 1) {
          pick(1, kSponge, s.arms[1].pos, false);
        } else {
          Vec2 dest = s.objects[kBowl];
          for (int c = kChili1; c <= kChili2; ++c) {
            if (!s.captured[c]) {
              dest = s.objects[c];
              break;
            }
          }
          step_id = 4;
          pick(1, kSponge, dest, false);
          // Sweeping goes right onto the chili; no waypoint offset.
          cmd[1] = dest;
        }
      }
      break;
  }

  // Speed limit and hand tremor.
  for (int a = 0; a < 2; ++a) {
    Vec2 d = cmd[a] - s.arms[a].pos;
    const double lim = speed_ * kMaxStep;
    if (d.norm() > lim) d *= lim / d.norm();
    Vec2 c = s.arms[a].pos + d;
    if (noise_.jitter_sd > 0) c += Vec2(noise_.jitter_sd * rng_.normal(), noise_.jitter_sd * rng_.normal());
    cmd[a] = clamp_table(c);
  }
  return make_action(cmd[0], grip[0], cmd[1], grip[1]);
}

// ---------------------------------------------------------------------------
// Data generation

namespace {

struct CameraWalk {
  Vec3 eye, target, eye0, target0;
};

retarget::HandKeypoints21 synth_hand(const Vec3& grasp_world, double grip, Side side,
                                     const geom::CameraModel& cam) {
  // Approach from above and behind (towards the viewer); fingers close along x.
  const Vec3 approach = Vec3(0.0, 0.6, -0.8).normalized();
  const Vec3 closing = Vec3::UnitX();
  const Vec3 up = approach.cross(closing);
  const double half = 0.5 * grip * retarget::kDefaultApertureMax;
  const Vec3 wrist = grasp_world - 0.09 * approach;
  const Vec3 thumb = grasp_world + half * closing;
  const Vec3 index = grasp_world - half * closing;
  std::array<Vec3, retarget::kNumKeypoints> w;
  w[retarget::kWrist] = wrist;
  // Thumb chain 1..4 and index chain 5..8 run from the wrist to the tips.
  for (int j = 1; j <= 4; ++j) w[j] = wrist + (thumb - wrist) * (j / 4.0) + 0.01 * up * (j % 2);
  for (int j = 5; j <= 8; ++j) w[j] = wrist + (index - wrist) * ((j - 4) / 4.0);
  // Remaining fingers curl in behind the index finger.
  for (int f = 0; f < 3; ++f)
    for (int j = 0; j < 4; ++j) {
      const double along = (j + 1) / 5.0;
      w[9 + 4 * f + j] = wrist + (index - wrist) * along - (0.015 * (f + 1)) * closing - 0.01 * up * j;
    }
  retarget::HandKeypoints21 h;
  h.side = side;
  h.confidence = 1.0;
  for (int i = 0; i < retarget::kNumKeypoints; ++i) {
    h.points[i] = cam.pose.apply(w[i]);
    h.points2d[i] = geom::project(h.points[i], cam);
  }
  return h;
}

bool in_view(const retarget::HandKeypoints21& h, const geom::CameraModel& cam) {
  for (int i : {retarget::kWrist, retarget::kThumbTip, retarget::kIndexTip}) {
    const Vec2& p = h.points2d[i];
    if (h.points[i].z() <= 0 || p.x() < 0 || p.y() < 0 || p.x() >= cam.width || p.y() >= cam.height) {
      return false;
    }
  }
  return true;
}

Vec3 clamp_norm(Vec3 v, double max) {
  const double n = v.norm();
  return n > max ? Vec3(v * (max / n)) : v;
}

}  // namespace

dataset::ClipBundle gen_human_clip(const SceneConfig& scene, std::uint64_t seed,
                                   const HumanClipConfig& cfg, HumanClipTruth* truth) {
  scene.validate();
  if (cfg.length < 2) throw InvalidArgument("human clips need at least two frames");
  const FeatureModel model(scene.world);
  Rng rng(derive_seed(seed, 11));

  // Play the whole episode, then cut a window of the requested length.
  Env env(scene);
  env.reset(derive_seed(seed, 12));
  Expert agent(scene.task, derive_seed(seed, 13), cfg.noise);
  std::vector<EnvState> states{env.state()};
  int after_finish = 0;
  while (static_cast<int>(states.size()) < scene.max_steps + cfg.length) {
    env.step(agent.act(env.state()));
    states.push_back(env.state());
    if (env.finished() && ++after_finish > 4 && static_cast<int>(states.size()) >= cfg.length) break;
  }
  const int total = static_cast<int>(states.size());
  const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(total - cfg.length + 1)));
  const int n = cfg.length;

  // Camera track: mean-reverting random walk plus designated jolt steps.
  std::vector<int> jolts;
  {
    const int count = static_cast<int>(std::lround(scene.camera.jolt_fraction * n));
    std::vector<int> candidates;
    for (int t = 1; t < n; ++t) candidates.push_back(t);
    for (int i = 0; i < count && !candidates.empty(); ++i) {
      const auto k = rng.below(candidates.size());
      jolts.push_back(candidates[k]);
      candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::sort(jolts.begin(), jolts.end());
  }
  const auto& cc = scene.camera;
  auto jitter3 = [&](double sd) { return Vec3(sd * rng.normal(), sd * rng.normal(), sd * rng.normal()); };
  CameraWalk walk;
  walk.eye0 = cc.eye + Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)) * cc.clip_offset;
  walk.target0 = cc.target + Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0) * cc.clip_offset;
  walk.eye = walk.eye0;
  walk.target = walk.target0;
  std::vector<geom::CameraModel> cams;
  const double view_dist = (cc.eye - cc.target).norm();
  for (int t = 0; t < n; ++t) {
    if (t > 0) {
      if (std::binary_search(jolts.begin(), jolts.end(), t)) {
        Vec3 dir(rng.normal(), rng.normal(), 0.0);
        walk.eye += cc.jolt_translation * dir.normalized();
      } else {
        // Bounded so that ordinary steps stay well inside the filter limits.
        walk.eye += clamp_norm(0.1 * (walk.eye0 - walk.eye) + jitter3(cc.step_translation), 0.03);
        walk.target += clamp_norm(0.1 * (walk.target0 - walk.target) + jitter3(cc.step_rotation * view_dist),
                                  0.1 * view_dist);
      }
    }
    cams.push_back(geom::CameraModel::look_at(walk.eye, walk.target, cc.focal, cc.focal, cc.width, cc.height));
  }

  // Visibility events.
  std::vector<std::array<bool, 2>> visible(n, {true, true});
  if (rng.uniform() < cfg.occlusion_prob) {
    const int arm = static_cast<int>(rng.below(2));
    const int from = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, n - 2))));
    const int len = 3 + static_cast<int>(rng.below(6));
    for (int t = from; t < std::min(n, from + len); ++t) visible[t][arm] = false;
  }
  if (rng.uniform() < cfg.absent_prob) {
    const int arm = static_cast<int>(rng.below(2));
    for (auto& v : visible) v[arm] = false;
  }
  if (rng.uniform() < cfg.late_start_prob) {
    const int k = 1 + static_cast<int>(rng.below(4));
    for (int t = 0; t < std::min(k, n); ++t) visible[t] = {false, false};
  }

  dataset::ClipBundle b;
  b.source = dataset::Source::Human;
  b.task = static_cast<std::int32_t>(scene.task);
  b.scene_style = scene.scene_style;
  b.embodiment = static_cast<std::int32_t>(scene.embodiment);
  b.seed = seed;
  {
    std::ostringstream id;
    id << "human-" << task_name(scene.task) << "-" << std::hex << seed;
    b.clip_id = id.str();
  }
  const auto& phrases = task_phrases(scene.task);
  b.annotation = phrases[rng.below(phrases.size())];
  const auto z = dataset::embed_language(b.annotation, scene.world.embed_dim);
  b.embedding = dataset::FloatArray(1, static_cast<std::uint32_t>(z.size()));
  for (std::size_t i = 0; i < z.size(); ++i) b.embedding.data[i] = static_cast<float>(z[i]);

  const auto un = static_cast<std::uint32_t>(n);
  b.features = dataset::FloatArray(un, static_cast<std::uint32_t>(scene.world.feature_dim()));
  b.cameras = dataset::FloatArray(un, dataset::kCameraCols);
  b.presence = dataset::FloatArray(un, 2);
  b.hands = dataset::FloatArray(un, 2 * dataset::kHandCols);
  b.truth_ee = dataset::FloatArray(un, dataset::kTruthCols);
  b.plane = dataset::FloatArray(1, 4);
  b.plane.data = {0.f, 0.f, 1.f, static_cast<float>(kEEHeight)};

  if (truth) *truth = {};
  std::array<std::optional<ArmState>, 2> last_seen;
  for (int t = 0; t < n; ++t) {
    const EnvState& st = states[static_cast<std::size_t>(start + t)];
    // Everything below sees the camera exactly as stored.
    dataset::set_camera(b, t, cams[t]);
    const auto cam = dataset::camera_at(b, t);
    std::array<bool, 2> present{false, false};
    for (int a = 0; a < 2; ++a) {
      const Vec3 grasp(st.arms[a].pos.x(), st.arms[a].pos.y(), kEEHeight);
      const auto hand = synth_hand(grasp, st.arms[a].grip, a == 0 ? Side::Left : Side::Right, cam);
      present[a] = visible[t][a] && in_view(hand, cam);
      if (present[a]) {
        dataset::set_hand(b, t, hand);
        last_seen[a] = st.arms[a];
      }
      b.presence.at(t, a) = present[a] ? 1.f : 0.f;
      b.truth_ee.at(t, 4 * a + 0) = static_cast<float>(grasp.x());
      b.truth_ee.at(t, 4 * a + 1) = static_cast<float>(grasp.y());
      b.truth_ee.at(t, 4 * a + 2) = static_cast<float>(grasp.z());
      b.truth_ee.at(t, 4 * a + 3) = static_cast<float>(st.arms[a].grip);
      if (truth) {
        if (a == 0) truth->grasp_world.push_back({});
        if (a == 0) truth->grip.push_back({});
        truth->grasp_world.back()[a] = grasp;
        truth->grip.back()[a] = st.arms[a].grip;
      }
    }
    // What the camera sees of the arms: the hands themselves, or the robot
    // rendered at the last known hand pose.
    EnvState shown = st;
    std::array<bool, 2> drawn = present;
    if (scene.embodiment == Embodiment::RobotOverlay) {
      for (int a = 0; a < 2; ++a) {
        if (!present[a] && last_seen[a]) {
          shown.arms[a] = *last_seen[a];
          drawn[a] = true;
        }
      }
    }
    const auto f = model.features(shown, cam, scene.embodiment, scene.scene_style, &rng, drawn);
    for (int i = 0; i < f.size(); ++i) b.features.at(t, i) = static_cast<float>(f(i));
  }
  if (truth) truth->jolt_frames = jolts;
  b.validate();
  return b;
}

std::vector<dataset::ClipBundle> gen_robot_demos(Task task, int n, std::uint64_t seed,
                                                 const SceneConfig& base, const RobotDemoConfig& cfg) {
  if (n < 1) throw InvalidArgument("need at least one robot demo");
  SceneConfig scene = base.task == task ? base : SceneConfig::defaults(task);
  scene.world = base.world;
  scene.camera = base.camera;
  scene.scene_style = 0;
  scene.embodiment = Embodiment::RobotOverlay;
  scene.validate();
  const FeatureModel model(scene.world);
  const auto cam = scene.camera.nominal();
  const auto z = dataset::embed_language(task_description(task), scene.world.embed_dim);

  std::vector<dataset::ClipBundle> demos;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t ep_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    Env env(scene);
    env.reset(ep_seed);
    Expert expert(task, derive_seed(ep_seed, 1));
    std::vector<EnvState> states{env.state()};
    std::vector<Action> actions;
    int tail = 0;
    while (env.state().steps < scene.max_steps) {
      const Action a = env.finished() ? hold_action(env.state()) : expert.act(env.state());
      actions.push_back(a);
      env.step(a);
      states.push_back(env.state());
      if (env.finished() && ++tail > cfg.tail_steps) break;
    }
    if (!env.finished()) throw Error("expert failed to complete a robot demo");
    const int t_len = static_cast<int>(actions.size());
    Rng noise(derive_seed(ep_seed, 2));

    dataset::ClipBundle b;
    std::ostringstream id;
    id << "robot-" << task_name(task) << "-" << i;
    b.clip_id = id.str();
    b.annotation = task_description(task);
    b.source = dataset::Source::Robot;
    b.task = static_cast<std::int32_t>(task);
    b.scene_style = 0;
    b.embodiment = static_cast<std::int32_t>(Embodiment::RobotOverlay);
    b.seed = ep_seed;
    b.embedding = dataset::FloatArray(1, static_cast<std::uint32_t>(z.size()));
    for (std::size_t k = 0; k < z.size(); ++k) b.embedding.data[k] = static_cast<float>(z[k]);
    const auto ut = static_cast<std::uint32_t>(t_len);
    b.features = dataset::FloatArray(ut, static_cast<std::uint32_t>(scene.world.feature_dim()));
    b.cameras = dataset::FloatArray(ut, dataset::kCameraCols);
    b.actions = dataset::FloatArray(ut, static_cast<std::uint32_t>(cfg.chunk_len * kActionDim));
    b.truth_ee = dataset::FloatArray(ut, dataset::kTruthCols);
    for (int t = 0; t < t_len; ++t) {
      const auto& st = states[t];
      dataset::set_camera(b, t, cam);
      const auto f = model.features(st, cam, Embodiment::RobotOverlay, 0, &noise);
      for (int k = 0; k < f.size(); ++k) b.features.at(t, k) = static_cast<float>(f(k));
      for (int j = 0; j < cfg.chunk_len; ++j) {
        const auto& a = actions[std::min(t + j, t_len - 1)];
        for (int d = 0; d < kActionDim; ++d) b.actions.at(t, j * kActionDim + d) = static_cast<float>(a[d]);
      }
      for (int a = 0; a < 2; ++a) {
        b.truth_ee.at(t, 4 * a + 0) = static_cast<float>(st.arms[a].pos.x());
        b.truth_ee.at(t, 4 * a + 1) = static_cast<float>(st.arms[a].pos.y());
        b.truth_ee.at(t, 4 * a + 2) = static_cast<float>(kEEHeight);
        b.truth_ee.at(t, 4 * a + 3) = static_cast<float>(st.arms[a].grip);
      }
    }
    b.validate();
    demos.push_back(std::move(b));
  }
  return demos;
}

std::vector<Action> chunk_actions(const dataset::ClipBundle& demo, int t) {
  const int len = static_cast<int>(demo.actions.cols) / kActionDim;
  std::vector<Action> out(static_cast<std::size_t>(len));
  for (int j = 0; j < len; ++j)
    for (int d = 0; d < kActionDim; ++d) out[j][d] = demo.actions.at(t, j * kActionDim + d);
  return out;
}

// ---------------------------------------------------------------------------
// Rollouts

std::vector<RolloutReport> rollout_batch(const SceneConfig& scene, const BatchPolicy& policy,
                                         std::span<const std::uint64_t> seeds,
                                         const RolloutConfig& cfg, std::uint64_t policy_seed) {
  if (cfg.execute < 1 || cfg.execute > cfg.chunk_len) {
    throw InvalidArgument("executed prefix must be within the chunk");
  }
  const FeatureModel model(scene.world);
  const auto cam = scene.camera.nominal();
  const std::size_t n = seeds.size();
  std::vector<Env> envs;
  std::vector<Rng> noise;
  envs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    envs.emplace_back(scene);
    envs.back().reset(seeds[i]);
    noise.emplace_back(derive_seed(seeds[i], 3));
  }
  Rng rng(policy_seed);
  const int f_dim = scene.world.feature_dim();
  while (true) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < n; ++i)
      if (!envs[i].finished() && envs[i].state().steps < cfg.max_steps) active.push_back(i);
    if (active.empty()) break;
    Eigen::MatrixXd obs(f_dim, static_cast<Eigen::Index>(active.size()));
    for (std::size_t j = 0; j < active.size(); ++j) {
      const auto i = active[j];
      obs.col(static_cast<Eigen::Index>(j)) =
          model.features(envs[i].state(), cam, Embodiment::RobotOverlay, scene.scene_style, &noise[i]);
    }
    const Eigen::MatrixXd chunks = policy(obs, rng);
    if (chunks.rows() != cfg.chunk_len * kActionDim || chunks.cols() != obs.cols()) {
      throw DimensionMismatch("policy returned a chunk batch of the wrong shape");
    }
    for (std::size_t j = 0; j < active.size(); ++j) {
      Env& env = envs[active[j]];
      for (int k = 0; k < cfg.execute; ++k) {
        if (env.finished() || env.state().steps >= cfg.max_steps) break;
        Action a;
        for (int d = 0; d < kActionDim; ++d) a[d] = chunks(k * kActionDim + d, static_cast<Eigen::Index>(j));
        env.step(a);
      }
    }
  }
  std::vector<RolloutReport> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].subtask_done = envs[i].state().done;
    out[i].score = envs[i].score();
    out[i].steps = envs[i].state().steps;
    out[i].seed = seeds[i];
  }
  return out;
}

RolloutReport rollout(const SceneConfig& scene, const std::function<Action(const EnvState&)>& policy,
                      std::uint64_t seed) {
  Env env(scene);
  env.reset(seed);
  while (!env.finished() && env.state().steps < scene.max_steps) env.step(policy(env.state()));
  RolloutReport r;
  r.subtask_done = env.state().done;
  r.score = env.score();
  r.steps = env.state().steps;
  r.seed = seed;
  return r;
}

std::string rollout_csv_header() { return "run,seed,subtask_1,subtask_2,subtask_3,score,steps\n"; }

std::string rollout_csv_row(const std::string& run, const RolloutReport& r) {
  std::ostringstream os;
  os << run << "," << r.seed << "," << r.subtask_done[0] << "," << r.subtask_done[1] << ","
     << r.subtask_done[2] << "," << fmt(r.score) << "," << r.steps << "\n";
  return os.str();
}

}  // namespace masq::simenv
