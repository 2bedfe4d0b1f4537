#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "masq/dataset.hpp"
#include "masq/nn.hpp"
#include "masq/simenv.hpp"

namespace masq::train {

struct TrainConfig {
  double lambda = 10.0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
  int batch_human = 32;
  int batch_robot = 16;
  int pretrain_steps = 5000;
  int cotrain_steps = 3000;
  int warmup = 500;
  int diffusion_steps = 100;
  std::uint64_t seed = 0;
  bool clip_uniform = false;  // sample a clip first, then a frame in it
  bool alternating = false;   // one loss per update instead of the combined loss
  int checkpoint_interval = 0;  // 0: only the final checkpoint
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints

  // Values used for the original full-size runs; kept for reference.
  static constexpr int kFullScaleBatchHuman = 160;
  static constexpr int kFullScaleBatchRobot = 64;
  static constexpr int kFullScalePretrainSteps = 150000;
  static constexpr int kFullScaleCotrainSteps = 40000;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  void apply(const std::map<std::string, std::string>& m);
};

struct StepRecord {
  std::int64_t step = 0;
  double l2d = 0.0;
  double lpolicy = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;  // not persisted; differs between runs
};

struct TrainLog {
  std::vector<StepRecord> records;
  std::vector<std::filesystem::path> checkpoints;

  /// step,l2d,lpolicy,total,lr with round-trip precision.
  std::string to_csv() const;
};

/// Linear warmup from 0 to `peak` over `warmup` steps, then half-cosine decay
/// to 0 at `total`.
double cosine_lr(std::int64_t step, std::int64_t total, std::int64_t warmup, double peak);

using Range = std::pair<Eigen::Index, Eigen::Index>;

/// Adam with decoupled weight decay. Only the given index ranges are touched,
/// so parameters outside the active objective keep their values.
class AdamW {
 public:
  AdamW(Eigen::Index size, const TrainConfig& cfg);
  void step(nn::ModelParams& p, double lr, std::span<const Range> ranges);
  std::int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, weight_decay_, eps_;
  std::int64_t t_ = 0;
  Eigen::VectorXd m_, v_;
};

/// Supervised human frames: retained frames of labelled clips, one column each.
struct HumanFrames {
  nn::Matrix x, z, target, mask;
  std::vector<int> clip;  // clip index per column
  int clips = 0;
  Eigen::Index size() const { return x.cols(); }
};

/// Robot frames with their action chunks.
struct RobotFrames {
  nn::Matrix y, z, chunks;
  Eigen::Index size() const { return y.cols(); }
};

HumanFrames human_frames(std::span<const dataset::ClipBundle> clips, const nn::ModelConfig& model);
RobotFrames robot_frames(std::span<const dataset::ClipBundle> demos, const nn::ModelConfig& model);

/// Index ranges of the keypoint head and the diffusion head in the flat arrays.
Range keypoint_range(const nn::ModelParams& p);
Range diffusion_range(const nn::ModelParams& p);

/// Minimizes L_2D over the encoder and keypoint head at a constant learning
/// rate. Throws EmptyDataset.
TrainLog pretrain(const HumanFrames& human, nn::ModelParams& params, const TrainConfig& cfg);

/// L = L_2D + lambda * L_policy on one human and one robot batch per update,
/// cosine schedule. With no human frames only L_policy is optimized.
/// Throws EmptyRobotDataset.
TrainLog cotrain(const HumanFrames& human, const RobotFrames& robot, nn::ModelParams& params,
                 const TrainConfig& cfg);

struct EvalResult {
  double mean = 0.0;
  double sem = 0.0;
  std::vector<simenv::RolloutReport> reports;
};

double mean_of(std::span<const double> v);
/// Standard error of the mean (sample standard deviation / sqrt(n)); 0 for n < 2.
double sem_of(std::span<const double> v);

/// Batched diffusion policy for rollouts: encoder features of the observation,
/// conditioned on the task instruction, then DDPM sampling.
simenv::BatchPolicy diffusion_policy(const nn::ModelParams& params, simenv::Task task,
                                     const nn::DiffusionSchedule& sched);

/// n rollouts with seeds derived from `seed`; styles in `styles` are used in
/// turn (empty: the scene's own style).
EvalResult evaluate(const nn::ModelParams& params, const simenv::SceneConfig& scene, int n_rollouts,
                    std::uint64_t seed, std::span<const int> styles = {},
                    const simenv::RolloutConfig& rollout = {});

}  // namespace masq::train
