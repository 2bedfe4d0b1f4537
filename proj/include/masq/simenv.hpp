#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "masq/dataset.hpp"
#include "masq/geom.hpp"
#include "masq/rng.hpp"

namespace masq::simenv {

// Planar table-top world. Objects and end effectors live on the table in
// world coordinates (meters); the robot base is at the origin.

enum class Task : std::int32_t { StackPots = 0, ScrapePotato = 1, SweepChilis = 2 };
inline constexpr std::array<Task, 3> kTasks{Task::StackPots, Task::ScrapePotato, Task::SweepChilis};

enum class Embodiment : std::int32_t { HandAppearance = 0, RobotOverlay = 1 };

const char* task_name(Task t);
Task parse_task(const std::string& s);
const char* embodiment_name(Embodiment e);
Embodiment parse_embodiment(const std::string& s);

/// The instruction used for robot demos and rollouts.
std::string task_description(Task t);
/// Alternative phrasings used to annotate human clips (includes the description).
const std::vector<std::string>& task_phrases(Task t);
const std::vector<std::string>& object_names(Task t);
inline constexpr int kMaxObjects = 4;
inline constexpr int kSubtasks = 3;

inline constexpr double kTableXMin = -0.45, kTableXMax = 0.45;
inline constexpr double kTableYMin = 0.2, kTableYMax = 0.7;
inline constexpr double kEEHeight = 0.07;  // end effectors travel on this plane

struct Box {
  Vec2 lo = Vec2::Zero();
  Vec2 hi = Vec2::Zero();

  bool contains(const Vec2& p) const;
  Vec2 sample(Rng& rng) const;
};

/// Appearance model shared by every scene: how world state, embodiment and
/// scene style turn into an F-dimensional frame feature.
struct WorldConfig {
  std::uint64_t world_seed = 2024;
  int geometry_dim = 48;    // G block: object image positions
  int arm_dim = 20;         // per arm, E block = 2 * arm_dim
  int style_block_dim = 40; // S block: background / scene appearance
  int style_dim = 40;       // latent style vector size
  double style_scale = 1.0;     // S-block nuisance magnitude
  double lighting_gain = 0.6;   // style-dependent shading on the arm appearance
  int lighting_rank = 4;        // shading directions per embodiment
  double feature_noise = 0.02;  // per-frame noise on G and S
  int embed_dim = 64;           // language embedding size

  int feature_dim() const { return geometry_dim + 2 * arm_dim + style_block_dim; }
  std::map<std::string, std::string> to_map() const;
  void apply(const std::map<std::string, std::string>& m);
  void validate() const;
};

struct CameraConfig {
  Vec3 eye{0.0, -0.3, 0.8};
  Vec3 target{0.0, 0.45, 0.0};
  double focal = 500.0;
  double width = 640.0;
  double height = 480.0;
  // Human clips only.
  double clip_offset = 0.04;       // per-clip placement jitter (m)
  double step_translation = 0.008; // per-step random walk sd (m)
  double step_rotation = 0.01;     // per-step random walk sd (rad)
  double jolt_fraction = 0.0;      // fraction of frames with a jolt step
  double jolt_translation = 0.08;  // jolt size (m), above the filter threshold

  geom::CameraModel nominal() const;
};

struct SceneConfig {
  Task task = Task::StackPots;
  int scene_style = 0;
  Embodiment embodiment = Embodiment::RobotOverlay;
  std::vector<Box> regions;  // one per object
  CameraConfig camera;
  WorldConfig world;
  int max_steps = 100;
  std::uint64_t seed = 0;

  /// Task defaults for object regions.
  static SceneConfig defaults(Task task, int scene_style = 0);
  void validate() const;

  /// Structured "key = value" text.
  std::string to_text() const;
  static SceneConfig from_text(const std::string& text);
};

// ---------------------------------------------------------------------------
// State and stepping

struct ArmState {
  Vec2 pos = Vec2::Zero();
  double grip = 1.0;  // 1 open, 0 closed
  int held = -1;      // object index or -1
};

using Action = std::array<double, 6>;  // per arm: x, y (normalized), grip
inline constexpr int kActionDim = 6;

Vec2 normalize_xy(const Vec2& world);
Vec2 denormalize_xy(const Vec2& n);
Action make_action(const Vec2& left, double left_grip, const Vec2& right, double right_grip);

struct EnvState {
  std::array<ArmState, 2> arms;
  std::vector<Vec2> objects;
  std::array<bool, kSubtasks> done{false, false, false};
  std::vector<bool> captured;  // swept along with a held sponge
  std::array<bool, kSubtasks> last_predicate{false, false, false};
  int steps = 0;
};

inline constexpr double kMaxStep = 0.05;       // m per step
inline constexpr double kGraspRadius = 0.05;
Vec2 rest_position(int arm);

class Env {
 public:
  explicit Env(const SceneConfig& scene);

  /// Random object placement inside the configured regions.
  void reset(std::uint64_t seed);
  void set_state(const EnvState& s) { state_ = s; }
  const EnvState& state() const { return state_; }
  const SceneConfig& scene() const { return scene_; }

  void step(const Action& a);
  /// Predicate of subtask k on the current state (independent of crediting).
  bool predicate(int k) const;
  int completed() const;
  double score() const { return completed() / 3.0; }
  bool finished() const { return completed() == kSubtasks; }

 private:
  void update_credit();

  SceneConfig scene_;
  EnvState state_;
};

// ---------------------------------------------------------------------------
// Appearance

class FeatureModel {
 public:
  explicit FeatureModel(const WorldConfig& cfg);

  const WorldConfig& config() const { return cfg_; }
  Eigen::VectorXd style_vector(int style) const;

  /// Noise-free feature blocks. `arm_visible` false zeroes that arm's E part.
  Eigen::VectorXd geometry(const EnvState& s, const geom::CameraModel& cam) const;
  Eigen::VectorXd appearance(const EnvState& s, const geom::CameraModel& cam, Embodiment emb,
                             int style, std::array<bool, 2> arm_visible = {true, true}) const;
  Eigen::VectorXd background(int style) const;

  /// Full frame feature [G; E; S] with noise drawn from `rng` when non-null.
  Eigen::VectorXd features(const EnvState& s, const geom::CameraModel& cam, Embodiment emb,
                           int style, Rng* rng, std::array<bool, 2> arm_visible = {true, true}) const;

  int e_offset() const { return cfg_.geometry_dim; }
  int s_offset() const { return cfg_.geometry_dim + 2 * cfg_.arm_dim; }

 private:
  WorldConfig cfg_;
  Eigen::MatrixXd w_geom_;
  Eigen::VectorXd b_geom_;
  std::array<Eigen::MatrixXd, 2> arm_proj_;   // per embodiment, arm_dim x 4
  std::array<Eigen::MatrixXd, 2> lighting_;   // per embodiment, 2*arm_dim x lighting_rank
  Eigen::MatrixXd background_;                // style_block_dim x style_dim
};

Vec2 image_coords(const Vec3& world, const geom::CameraModel& cam);

// ---------------------------------------------------------------------------
// Scripted agents

struct ExpertNoise {
  double target_sd = 0.0;  // per-episode offset of every waypoint (m)
  double speed_min = 1.0;  // fraction of max step
  double speed_max = 1.0;
  double jitter_sd = 0.0;  // per-step position jitter (m)
};

/// State-based scripted controller. `stop_after` limits how many subtasks it
/// attempts (3 = full task); past that point it holds still.
class Expert {
 public:
  Expert(Task task, std::uint64_t seed, const ExpertNoise& noise = {}, int stop_after = kSubtasks);
  Action act(const EnvState& s);

 private:
  Task task_;
  Rng rng_;
  ExpertNoise noise_;
  int stop_after_;
  double speed_ = 1.0;
  std::array<Vec2, 8> offsets_{};
};

/// Holds the current pose and grip.
Action hold_action(const EnvState& s);

// ---------------------------------------------------------------------------
// Data generation

struct HumanClipConfig {
  int length = 40;
  double occlusion_prob = 0.2;   // one hand leaves view for a few frames
  double absent_prob = 0.1;      // one hand never visible
  double late_start_prob = 0.1;  // both hands missing for the first frames
  ExpertNoise noise{0.01, 0.7, 1.0, 0.003};
};

struct HumanClipTruth {
  std::vector<std::array<Vec3, 2>> grasp_world;  // per frame, per arm
  std::vector<std::array<double, 2>> grip;
  std::vector<int> jolt_frames;
};

/// Scripted two-hand episode filmed by a moving camera. Emits hand keypoints,
/// the camera track, the EE plane, features, and ground truth.
dataset::ClipBundle gen_human_clip(const SceneConfig& scene, std::uint64_t seed,
                                   const HumanClipConfig& cfg = {}, HumanClipTruth* truth = nullptr);

struct RobotDemoConfig {
  int chunk_len = 8;
  int tail_steps = 4;  // frames recorded after completion
};

/// Expert demos in the ID scene (style 0, static camera) with action-chunk labels.
std::vector<dataset::ClipBundle> gen_robot_demos(Task task, int n, std::uint64_t seed,
                                                 const SceneConfig& base = SceneConfig::defaults(Task::StackPots),
                                                 const RobotDemoConfig& cfg = {});

/// Decodes row t of a demo's action chunks into per-step actions.
std::vector<Action> chunk_actions(const dataset::ClipBundle& demo, int t);

// ---------------------------------------------------------------------------
// Rollouts

struct RolloutReport {
  std::array<bool, kSubtasks> subtask_done{false, false, false};
  double score = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;
};

/// Maps a batch of observations (F x B) and the task embedding to action
/// chunks ((A * 6) x B).
using BatchPolicy = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& obs, Rng& rng)>;

struct RolloutConfig {
  int execute = 4;  // actions executed per chunk
  int chunk_len = 8;
  int max_steps = 100;
};

/// Runs one episode per seed in lockstep, querying the policy with all
/// unfinished episodes at once.
std::vector<RolloutReport> rollout_batch(const SceneConfig& scene, const BatchPolicy& policy,
                                         std::span<const std::uint64_t> seeds,
                                         const RolloutConfig& cfg, std::uint64_t policy_seed);

/// Single-episode form with a per-step policy.
RolloutReport rollout(const SceneConfig& scene, const std::function<Action(const EnvState&)>& policy,
                      std::uint64_t seed);

std::string rollout_csv_header();
std::string rollout_csv_row(const std::string& run, const RolloutReport& r);

}  // namespace masq::simenv
