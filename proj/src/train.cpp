#include "masq/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "masq/error.hpp"

namespace masq::train {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
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

std::uint64_t unsigned_num(const std::map<std::string, std::string>& m, const std::string& key,
                           std::uint64_t fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad value for " + key + ": " + it->second);
  }
}

class Sampler {
 public:
  Sampler(const HumanFrames& h, bool by_clip) : by_clip_(by_clip) {
    if (by_clip) {
      per_clip_.resize(static_cast<std::size_t>(h.clips));
      for (Eigen::Index i = 0; i < h.size(); ++i) per_clip_[h.clip[i]].push_back(static_cast<int>(i));
      std::erase_if(per_clip_, [](const auto& v) { return v.empty(); });
    }
    n_ = h.size();
  }

  Eigen::Index next(Rng& rng) const {
    if (!by_clip_) return static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n_)));
    const auto& frames = per_clip_[rng.below(per_clip_.size())];
    return frames[rng.below(frames.size())];
  }

 private:
  bool by_clip_;
  Eigen::Index n_ = 0;
  std::vector<std::vector<int>> per_clip_;
};

nn::KeypointBatch human_batch(const HumanFrames& h, const Sampler& sampler, int size, Rng& rng) {
  nn::KeypointBatch b;
  b.x.resize(h.x.rows(), size);
  b.z.resize(h.z.rows(), size);
  b.target.resize(h.target.rows(), size);
  b.mask.resize(h.mask.rows(), size);
  for (int j = 0; j < size; ++j) {
    const Eigen::Index i = sampler.next(rng);
    b.x.col(j) = h.x.col(i);
    b.z.col(j) = h.z.col(i);
    b.target.col(j) = h.target.col(i);
    b.mask.col(j) = h.mask.col(i);
  }
  return b;
}

nn::PolicyBatch robot_batch(const RobotFrames& r, int size, Rng& rng) {
  nn::PolicyBatch b;
  b.y.resize(r.y.rows(), size);
  b.z.resize(r.z.rows(), size);
  b.chunks.resize(r.chunks.rows(), size);
  for (int j = 0; j < size; ++j) {
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(r.size())));
    b.y.col(j) = r.y.col(i);
    b.z.col(j) = r.z.col(i);
    b.chunks.col(j) = r.chunks.col(i);
  }
  return b;
}

void check_finite(double v, std::int64_t step) {
  if (!std::isfinite(v)) throw Error("loss diverged at step " + std::to_string(step));
}

class Checkpointer {
 public:
  Checkpointer(const TrainConfig& cfg, std::string phase) : cfg_(cfg), phase_(std::move(phase)) {
    if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);
  }

  void maybe(const nn::ModelParams& p, std::int64_t done, bool last, const Rng& rng, TrainLog& log) {
    if (cfg_.checkpoint_dir.empty()) return;
    const bool interval = cfg_.checkpoint_interval > 0 && done % cfg_.checkpoint_interval == 0;
    if (!interval && !last) return;
    char name[64];
    if (last) {
      std::snprintf(name, sizeof(name), "%s_final.ckpt", phase_.c_str());
    } else {
      std::snprintf(name, sizeof(name), "%s_step%08lld.ckpt", phase_.c_str(), static_cast<long long>(done));
    }
    nn::CheckpointMeta meta;
    meta.step = done;
    meta.rng_state = nn::rng_state_string(rng);
    for (const auto& [k, v] : cfg_.to_map()) meta.extra["train." + k] = v;
    meta.extra["phase"] = phase_;
    const auto path = cfg_.checkpoint_dir / name;
    nn::save_checkpoint(path, p, meta);
    log.checkpoints.push_back(path);
  }

 private:
  const TrainConfig& cfg_;
  std::string phase_;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be >= 0");
  if (!(lr > 0)) throw InvalidArgument("lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw InvalidArgument("Adam betas must be in [0, 1)");
  if (!(weight_decay >= 0) || !(eps > 0)) throw InvalidArgument("bad weight decay or eps");
  if (batch_human < 1 || batch_robot < 1) throw InvalidArgument("batch sizes must be positive");
  if (pretrain_steps < 0 || cotrain_steps < 0 || warmup < 0) throw InvalidArgument("step counts must be >= 0");
  if (diffusion_steps < 1) throw InvalidArgument("diffusion_steps must be positive");
  if (checkpoint_interval < 0) throw InvalidArgument("checkpoint_interval must be >= 0");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {{"lambda", fmt(lambda)},
          {"lr", fmt(lr)},
          {"beta1", fmt(beta1)},
          {"beta2", fmt(beta2)},
          {"weight_decay", fmt(weight_decay)},
          {"eps", fmt(eps)},
          {"batch_human", std::to_string(batch_human)},
          {"batch_robot", std::to_string(batch_robot)},
          {"pretrain_steps", std::to_string(pretrain_steps)},
          {"cotrain_steps", std::to_string(cotrain_steps)},
          {"warmup", std::to_string(warmup)},
          {"diffusion_steps", std::to_string(diffusion_steps)},
          {"seed", std::to_string(seed)},
          {"clip_uniform", clip_uniform ? "1" : "0"},
          {"alternating", alternating ? "1" : "0"},
          {"checkpoint_interval", std::to_string(checkpoint_interval)}};
}

void TrainConfig::apply(const std::map<std::string, std::string>& m) {
  lambda = num(m, "lambda", lambda);
  lr = num(m, "lr", lr);
  beta1 = num(m, "beta1", beta1);
  beta2 = num(m, "beta2", beta2);
  weight_decay = num(m, "weight_decay", weight_decay);
  eps = num(m, "eps", eps);
  batch_human = static_cast<int>(num(m, "batch_human", batch_human));
  batch_robot = static_cast<int>(num(m, "batch_robot", batch_robot));
  pretrain_steps = static_cast<int>(num(m, "pretrain_steps", pretrain_steps));
  cotrain_steps = static_cast<int>(num(m, "cotrain_steps", cotrain_steps));
  warmup = static_cast<int>(num(m, "warmup", warmup));
  diffusion_steps = static_cast<int>(num(m, "diffusion_steps", diffusion_steps));
  seed = unsigned_num(m, "seed", seed);
  clip_uniform = num(m, "clip_uniform", clip_uniform) != 0;
  alternating = num(m, "alternating", alternating) != 0;
  checkpoint_interval = static_cast<int>(num(m, "checkpoint_interval", checkpoint_interval));
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "step,l2d,lpolicy,total,lr\n";
  for (const auto& r : records) {
    os << r.step << ',' << fmt(r.l2d) << ',' << fmt(r.lpolicy) << ',' << fmt(r.total) << ',' << fmt(r.lr)
       << '\n';
  }
  return os.str();
}

double cosine_lr(std::int64_t step, std::int64_t total, std::int64_t warmup, double peak) {
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup) return peak;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(Eigen::Index size, const TrainConfig& cfg)
    : beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      weight_decay_(cfg.weight_decay),
      eps_(cfg.eps),
      m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)) {}

void AdamW::step(nn::ModelParams& p, double lr, std::span<const Range> ranges) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto& w = p.values();
  const auto& g = p.grads();
  for (const auto& [begin, end] : ranges) {
    for (Eigen::Index i = begin; i < end; ++i) {
      w[i] -= lr * weight_decay_ * w[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------

HumanFrames human_frames(std::span<const dataset::ClipBundle> clips, const nn::ModelConfig& model) {
  const int k = model.keypoint_outputs();
  const int per_arm = 2 * (model.horizon + 1);
  Eigen::Index n = 0;
  for (const auto& c : clips) {
    if (!c.has_labels()) throw InvalidArgument("human clip " + c.clip_id + " has no labels");
    if (c.label_horizon() != model.horizon) throw DimensionMismatch("label horizon differs from the model's");
    if (c.feature_dim() != model.feature_dim || c.embed_dim() != model.embed_dim) {
      throw DimensionMismatch("clip " + c.clip_id + " does not match the model input sizes");
    }
    for (int t = 0; t < c.frames(); ++t) n += dataset::kept(c, t);
  }
  HumanFrames h;
  h.x.resize(model.feature_dim, n);
  h.z.resize(model.embed_dim, n);
  h.target.resize(k, n);
  h.mask.resize(k, n);
  h.clips = static_cast<int>(clips.size());
  Eigen::Index col = 0;
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const auto& c = clips[ci];
    for (int t = 0; t < c.frames(); ++t) {
      if (!dataset::kept(c, t)) continue;
      for (int i = 0; i < model.feature_dim; ++i) h.x(i, col) = c.features.at(t, i);
      for (int i = 0; i < model.embed_dim; ++i) h.z(i, col) = c.embedding.at(0, i);
      const auto row = c.labels.row(t);
      for (int arm = 0; arm < 2; ++arm) {
        const int off = arm * (1 + per_arm);
        const double valid = row[off] != 0.f ? 1.0 : 0.0;
        for (int j = 0; j < per_arm; ++j) {
          h.target(arm * per_arm + j, col) = row[off + 1 + j];
          h.mask(arm * per_arm + j, col) = valid;
        }
      }
      h.clip.push_back(static_cast<int>(ci));
      ++col;
    }
  }
  return h;
}

RobotFrames robot_frames(std::span<const dataset::ClipBundle> demos, const nn::ModelConfig& model) {
  Eigen::Index n = 0;
  for (const auto& d : demos) {
    if (!d.has_actions()) throw InvalidArgument("robot clip " + d.clip_id + " has no action chunks");
    if (static_cast<int>(d.actions.cols) != model.chunk_size() || d.feature_dim() != model.feature_dim ||
        d.embed_dim() != model.embed_dim) {
      throw DimensionMismatch("robot clip " + d.clip_id + " does not match the model sizes");
    }
    n += d.frames();
  }
  RobotFrames r;
  r.y.resize(model.feature_dim, n);
  r.z.resize(model.embed_dim, n);
  r.chunks.resize(model.chunk_size(), n);
  Eigen::Index col = 0;
  for (const auto& d : demos) {
    for (int t = 0; t < d.frames(); ++t, ++col) {
      for (int i = 0; i < model.feature_dim; ++i) r.y(i, col) = d.features.at(t, i);
      for (int i = 0; i < model.embed_dim; ++i) r.z(i, col) = d.embedding.at(0, i);
      for (int i = 0; i < model.chunk_size(); ++i) r.chunks(i, col) = d.actions.at(t, i);
    }
  }
  return r;
}

Range keypoint_range(const nn::ModelParams& p) {
  const auto& s = p.slots();
  const auto& kp = p.keypoint_head();
  return {s[kp.w].offset, s[kp.b].offset + s[kp.b].rows * s[kp.b].cols};
}

Range diffusion_range(const nn::ModelParams& p) {
  return {p.slots()[p.diffusion_head().front().w].offset, p.size()};
}

TrainLog pretrain(const HumanFrames& human, nn::ModelParams& params, const TrainConfig& cfg) {
  cfg.validate();
  if (human.size() == 0) throw EmptyDataset("no retained human frames to pretrain on");
  const auto t0 = Clock::now();
  const Sampler sampler(human, cfg.clip_uniform);
  Rng rng(derive_seed(cfg.seed, 1));
  AdamW opt(params.size(), cfg);
  const std::array<Range, 1> active{Range{0, keypoint_range(params).second}};
  Checkpointer ckpt(cfg, "pretrain");
  TrainLog log;
  for (std::int64_t s = 0; s < cfg.pretrain_steps; ++s) {
    params.zero_grad();
    const auto batch = human_batch(human, sampler, cfg.batch_human, rng);
    const double l2d = nn::keypoint_loss(params, batch, 1.0);
    check_finite(l2d, s);
    opt.step(params, cfg.lr, active);
    log.records.push_back({s, l2d, 0.0, l2d, cfg.lr, seconds_since(t0)});
    ckpt.maybe(params, s + 1, s + 1 == cfg.pretrain_steps, rng, log);
  }
  return log;
}

TrainLog cotrain(const HumanFrames& human, const RobotFrames& robot, nn::ModelParams& params,
                 const TrainConfig& cfg) {
  cfg.validate();
  if (robot.size() == 0) throw EmptyRobotDataset("co-training needs robot demonstrations");
  const auto t0 = Clock::now();
  const bool finetune = human.size() == 0;
  const Sampler sampler(human, cfg.clip_uniform);
  // Separate streams so that the robot batches and diffusion noise do not
  // depend on whether human batches are drawn.
  Rng human_rng(derive_seed(cfg.seed, 1));
  Rng robot_rng(derive_seed(cfg.seed, 2));
  Rng noise_rng(derive_seed(cfg.seed, 3));
  const nn::DiffusionSchedule sched(cfg.diffusion_steps);
  AdamW opt(params.size(), cfg);
  std::vector<Range> active;
  if (finetune) {
    active = {{0, params.encoder_range().second}, diffusion_range(params)};
  } else {
    active = {{0, params.size()}};
  }
  Checkpointer ckpt(cfg, finetune ? "finetune" : "cotrain");
  TrainLog log;
  for (std::int64_t s = 0; s < cfg.cotrain_steps; ++s) {
    params.zero_grad();
    const double lr = cosine_lr(s, cfg.cotrain_steps, cfg.warmup, cfg.lr);
    StepRecord rec;
    rec.step = s;
    rec.lr = lr;
    const bool do_human = !finetune && (!cfg.alternating || s % 2 == 0);
    const bool do_robot = finetune || !cfg.alternating || s % 2 == 1;
    if (do_human) {
      const auto batch = human_batch(human, sampler, cfg.batch_human, human_rng);
      rec.l2d = nn::keypoint_loss(params, batch, 1.0);
    }
    if (do_robot) {
      const auto batch = robot_batch(robot, cfg.batch_robot, robot_rng);
      rec.lpolicy = nn::loss_policy(params, batch, sched, noise_rng, finetune ? 1.0 : cfg.lambda);
    }
    rec.total = finetune ? rec.lpolicy : rec.l2d + cfg.lambda * rec.lpolicy;
    check_finite(rec.total, s);
    opt.step(params, lr, active);
    rec.wall_seconds = seconds_since(t0);
    log.records.push_back(rec);
    ckpt.maybe(params, s + 1, s + 1 == cfg.cotrain_steps, noise_rng, log);
  }
  return log;
}

// ---------------------------------------------------------------------------

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sem_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

simenv::BatchPolicy diffusion_policy(const nn::ModelParams& params, simenv::Task task,
                                     const nn::DiffusionSchedule& sched) {
  const auto& cfg = params.config();
  const auto e = dataset::embed_language(simenv::task_description(task), cfg.embed_dim);
  nn::Vector z(cfg.embed_dim);
  // Instructions travel as binary32 in the datasets; match that here.
  for (int i = 0; i < cfg.embed_dim; ++i) z(i) = static_cast<float>(e[i]);
  return [&params, sched, z](const Eigen::MatrixXd& obs, Rng& rng) {
    // Observations are also stored as binary32 during training.
    const nn::Matrix x = obs.cast<float>().cast<double>();
    const nn::Matrix zb = z.replicate(1, obs.cols());
    const nn::Matrix f = nn::encoder_forward(params, x, zb);
    return nn::ddpm_sample(params, f, sched, rng);
  };
}

EvalResult evaluate(const nn::ModelParams& params, const simenv::SceneConfig& scene, int n_rollouts,
                    std::uint64_t seed, std::span<const int> styles, const simenv::RolloutConfig& rollout) {
  if (n_rollouts < 1) throw InvalidArgument("need at least one rollout");
  const nn::DiffusionSchedule sched(100);
  const auto policy = diffusion_policy(params, scene.task, sched);
  std::vector<int> use(styles.begin(), styles.end());
  if (use.empty()) use.push_back(scene.scene_style);
  EvalResult out;
  out.reports.resize(static_cast<std::size_t>(n_rollouts));
  for (std::size_t si = 0; si < use.size(); ++si) {
    simenv::SceneConfig sc = scene;
    sc.scene_style = use[si];
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> slots;
    for (int i = static_cast<int>(si); i < n_rollouts; i += static_cast<int>(use.size())) {
      seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
      slots.push_back(static_cast<std::size_t>(i));
    }
    if (seeds.empty()) continue;
    const auto reports = simenv::rollout_batch(sc, policy, seeds, rollout, derive_seed(seed, 1000 + si));
    for (std::size_t j = 0; j < reports.size(); ++j) out.reports[slots[j]] = reports[j];
  }
  std::vector<double> scores;
  for (const auto& r : out.reports) scores.push_back(r.score);
  out.mean = mean_of(scores);
  out.sem = sem_of(scores);
  return out;
}

}  // namespace masq::train
