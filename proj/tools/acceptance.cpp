// Runs every acceptance criterion at its stated tolerance and runtime budget
// and prints one PASS/FAIL line per criterion. Exit status is the number of
// failed criteria (capped at 100).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "masq/dataset.hpp"
#include "masq/error.hpp"
#include "masq/experiments.hpp"
#include "masq/filter.hpp"
#include "masq/geom.hpp"
#include "masq/io.hpp"
#include "masq/labelgen.hpp"
#include "masq/nn.hpp"
#include "masq/robotize.hpp"
#include "masq/simenv.hpp"
#include "masq/train.hpp"
#include "support/grad_check.hpp"
#include "support/scenes.hpp"
#include "support/tracks.hpp"

using namespace masq;
namespace fs = std::filesystem;
using testing::random_matrix;
using testing::small_model;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back((ok ? "" : "FAILED ") + what);
  }
};

// ---------------------------------------------------------------------------
// 1. Gradients

nn::ModelParams perturbed(const nn::ModelConfig& cfg, std::uint64_t seed) {
  nn::ModelParams p(cfg);
  Rng rng(seed);
  p.init(rng);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.values()(i) += 0.05 * rng.normal();
  return p;
}

// Central differences on coordinates drawn from [begin, end).
double range_check(Eigen::VectorXd& values, const Eigen::VectorXd& analytic, Eigen::Index begin,
                   Eigen::Index end, const std::function<double()>& loss, int count, Rng& rng) {
  const double eps = 1e-5;
  double worst = 0.0;
  for (int k = 0; k < count; ++k) {
    const auto i = begin + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(end - begin)));
    const double saved = values(i);
    values(i) = saved + eps;
    const double up = loss();
    values(i) = saved - eps;
    const double down = loss();
    values(i) = saved;
    worst = std::max(worst, testing::rel_error(analytic(i), (up - down) / (2 * eps)));
  }
  return worst;
}

Outcome gradients() {
  Outcome o;
  const int n = 200;
  Rng rng(101);

  {  // affine: parameters and inputs
    Eigen::VectorXd theta = random_matrix(5 * 7 + 5, 1, rng).col(0);
    nn::Matrix x = random_matrix(7, 4, rng);
    const nn::Matrix c = random_matrix(5, 4, rng);
    auto loss = [&] {
      Eigen::Map<nn::Matrix> w(theta.data(), 5, 7);
      Eigen::Map<nn::Vector> b(theta.data() + 35, 5);
      return nn::affine(w, b, x).cwiseProduct(c).sum();
    };
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
    Eigen::Map<nn::Matrix> w(theta.data(), 5, 7);
    Eigen::Map<nn::Matrix> dw(grad.data(), 5, 7);
    Eigen::Map<nn::Vector> db(grad.data() + 35, 5);
    const nn::Matrix dx = nn::affine_backward(w, x, c, dw, db);
    const double e1 = range_check(theta, grad, 0, theta.size(), loss, n, rng);
    Eigen::VectorXd xv = Eigen::Map<Eigen::VectorXd>(x.data(), x.size());
    const Eigen::VectorXd dxv = Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size());
    auto loss_x = [&] {
      Eigen::Map<nn::Matrix> xm(xv.data(), 7, 4);
      return nn::affine(w, Eigen::Map<nn::Vector>(theta.data() + 35, 5), xm).cwiseProduct(c).sum();
    };
    const double e2 = range_check(xv, dxv, 0, xv.size(), loss_x, n, rng);
    o.require(std::max(e1, e2) < 1e-4, "affine " + fmt("%.2e", std::max(e1, e2)));
  }
  {  // FiLM generator and its input
    const int width = 6, d = 4, b = 5;
    const nn::Matrix hidden = random_matrix(width, b, rng);
    const nn::Matrix z = random_matrix(d, b, rng);
    const nn::Matrix c = random_matrix(width, b, rng);
    Eigen::VectorXd theta = random_matrix(2 * width * d + 2 * width, 1, rng).col(0);
    auto views = [&](Eigen::VectorXd& t) {
      return std::make_tuple(Eigen::Map<nn::Matrix>(t.data(), width, d),
                             Eigen::Map<nn::Vector>(t.data() + width * d, width),
                             Eigen::Map<nn::Matrix>(t.data() + width * d + width, width, d),
                             Eigen::Map<nn::Vector>(t.data() + 2 * width * d + width, width));
    };
    auto loss = [&] {
      auto [gw, gb, bw, bb] = views(theta);
      return nn::film_batch(hidden, z, gw, gb, bw, bb).cwiseProduct(c).sum();
    };
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
    auto [gw, gb, bw, bb] = views(theta);
    auto [dgw, dgb, dbw, dbb] = views(grad);
    nn::Matrix gamma;
    nn::film_batch(hidden, z, gw, gb, bw, bb, &gamma);
    nn::film_backward(hidden, z, gamma, c, dgw, dgb, dbw, dbb);
    const double e = range_check(theta, grad, 0, theta.size(), loss, n, rng);
    o.require(e < 1e-4, "film " + fmt("%.2e", e));
  }
  const auto cfg = small_model();
  {  // tanh encoder stack: affine, FiLM and tanh composed
    auto p = perturbed(cfg, 102);
    const nn::Matrix x = random_matrix(cfg.feature_dim, 4, rng);
    const nn::Matrix z = random_matrix(cfg.embed_dim, 4, rng, 0.3);
    const nn::Matrix c = random_matrix(cfg.feature_out(), 4, rng);
    nn::EncoderCache cache;
    nn::encoder_forward(p, x, z, &cache);
    p.zero_grad();
    nn::encoder_backward(p, cache, c);
    const Eigen::VectorXd grad = p.grads();
    const auto [b0, b1] = p.encoder_range();
    auto loss = [&] { return nn::encoder_forward(p, x, z).cwiseProduct(c).sum(); };
    const double e = range_check(p.values(), grad, b0, b1, loss, n, rng);
    o.require(e < 1e-4, "tanh encoder " + fmt("%.2e", e));
  }
  {  // keypoint head through the whole encoder
    auto p = perturbed(cfg, 103);
    nn::KeypointBatch kb;
    kb.x = random_matrix(cfg.feature_dim, 4, rng);
    kb.z = random_matrix(cfg.embed_dim, 4, rng, 0.3);
    kb.target = random_matrix(cfg.keypoint_outputs(), 4, rng, 0.5);
    kb.mask = nn::Matrix::Ones(cfg.keypoint_outputs(), 4);
    p.zero_grad();
    nn::keypoint_loss(p, kb);
    const Eigen::VectorXd grad = p.grads();
    const auto [k0, k1] = train::keypoint_range(p);
    auto loss = [&] { return nn::keypoint_loss(p, kb, 0.0); };
    const double head = range_check(p.values(), grad, k0, k1, loss, n, rng);
    const double all = range_check(p.values(), grad, 0, p.size(), loss, n, rng);
    o.require(std::max(head, all) < 1e-4, "keypoint head " + fmt("%.2e", std::max(head, all)));
  }
  {  // diffusion head through the whole encoder
    auto p = perturbed(cfg, 104);
    const nn::DiffusionSchedule sched;
    nn::PolicyBatch pb{random_matrix(cfg.feature_dim, 3, rng), random_matrix(cfg.embed_dim, 3, rng, 0.3),
                       random_matrix(cfg.chunk_size(), 3, rng, 0.5)};
    const std::vector<int> steps{0, 42, 99};
    const nn::Matrix noise = random_matrix(cfg.chunk_size(), 3, rng);
    p.zero_grad();
    nn::policy_loss_at(p, pb, steps, noise, sched);
    const Eigen::VectorXd grad = p.grads();
    const auto [d0, d1] = train::diffusion_range(p);
    auto loss = [&] { return nn::policy_loss_at(p, pb, steps, noise, sched, 0.0); };
    const double head = range_check(p.values(), grad, d0, d1, loss, n, rng);
    const double all = range_check(p.values(), grad, 0, p.size(), loss, n, rng);
    o.require(std::max(head, all) < 1e-4, "diffusion head " + fmt("%.2e", std::max(head, all)));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 2. Homography

Outcome homography() {
  Outcome o;
  Rng rng(201);
  double worst = 0.0;
  for (int scene = 0; scene < 100; ++scene) {
    const auto a = testing::random_table_camera(rng);
    const auto b = testing::random_table_camera(rng);
    const auto plane = testing::random_plane(rng);
    std::vector<Vec2> src, dst;
    for (int i = 0; i < 12; ++i) {
      const Vec3 x = testing::point_on_plane(plane, rng.uniform(-0.3, 0.3), rng.uniform(0.1, 0.7));
      src.push_back(geom::project_world(x, a));
      dst.push_back(geom::project_world(x, b));
    }
    const auto h = geom::estimate_homography(src, dst);
    for (std::size_t i = 0; i < src.size(); ++i) worst = std::max(worst, (geom::warp(h, src[i]) - dst[i]).norm());
  }
  o.require(worst < 1e-6, "max reprojection " + fmt("%.2e", worst) + " px over 100 scenes");
  return o;
}

// ---------------------------------------------------------------------------
// 3. Label warp

Outcome label_warp() {
  Outcome o;
  Rng rng(301);
  double worst = 0.0;
  for (int clip = 0; clip < 20; ++clip) {
    const int n = 30;
    const auto plane = testing::random_plane(rng);
    const auto cams = testing::drifting_track(n, rng);
    const auto traj = testing::trajectory_on_plane(n, plane, rng);
    labelgen::LabelConfig cfg;
    cfg.normalize = false;
    const auto labels =
        labelgen::make_labels(traj, cams, labelgen::HomographyLookup::from_camera_track(cams, plane), cfg);
    for (int t = 0; t < n; ++t)
      for (int s = 0; s < 2; ++s)
        for (int k = 0; k <= cfg.horizon; ++k) {
          const int f = std::min(t + k, n - 1);
          const Vec3 c = cams[t].pose.rotation * traj[f][s].position + cams[t].pose.translation;
          const Vec2 direct(cams[t].fx * c.x() / c.z() + cams[t].cx, cams[t].fy * c.y() / c.z() + cams[t].cy);
          worst = std::max(worst, (labels[t][s].waypoints[k] - direct).norm());
        }
  }
  o.require(worst < 1e-6, "max deviation from direct projection " + fmt("%.2e", worst) + " px over 20 clips");
  return o;
}

// ---------------------------------------------------------------------------
// 4. Filter

Outcome filter_rules() {
  Outcome o;
  using filter::DropReason;
  const int n = 12;
  std::vector<geom::CameraMotion> motions(n);
  std::vector<labelgen::PosePair> poses(n);
  std::vector<labelgen::HandFlags> presence(n, labelgen::HandFlags{true, true});
  for (int t = 0; t < n; ++t) {
    poses[t][0].position = Vec3(-0.2, 0.4 + 0.01 * t, 0.05);
    poses[t][1].position = Vec3(0.2, 0.4, 0.05);
  }
  // Known per-step motions around both thresholds.
  motions[2].translation = 0.05;     // at the limit: kept
  motions[3].translation = 0.0501;   // over: dropped
  motions[4].rotation = 0.5;         // at the limit: kept
  motions[5].rotation = 0.50001;     // over: dropped
  motions[6].translation = 0.2;      // well over: dropped
  // Left hand never appears in frames 0-1 and right hand not before frame 2:
  // both missing with no history there.
  presence[0] = {false, false};
  presence[1] = {false, false};
  presence[2] = {true, false};
  // Right hand occluded later: last visible pose reused.
  presence[9] = {true, false};
  presence[10] = {true, false};
  const auto patched = labelgen::apply_missing_hand_rules(presence, poses);
  const auto r = filter::filter_clip(motions, patched.poses, patched.keep, patched.sentinel, {});

  const std::vector<int> expected{2, 4, 7, 8, 9, 10, 11};
  o.require(r.retained == expected, "retained frames match the rules exactly");
  o.require(r.report.reasons[3] == DropReason::CameraMotion && r.report.reasons[5] == DropReason::CameraMotion &&
                r.report.reasons[6] == DropReason::CameraMotion,
            "strict thresholds: 5 cm and 0.5 rad kept, anything above dropped");
  o.require(r.report.reasons[0] == DropReason::BothHandsMissing && r.report.reasons[1] == DropReason::BothHandsMissing,
            "both hands missing without history discarded");
  o.require(patched.sentinel[2][1] && !patched.sentinel[3][1], "right hand sentinel until first seen");
  o.require(patched.poses[9][1].position == poses[8][1].position &&
                patched.poses[10][1].position == poses[8][1].position,
            "occluded hand reuses its last visible pose");
  o.require(r.report.reconciles(), "report counts reconcile");

  // A hand absent for the whole clip is sentinel everywhere and its labels are
  // the out-of-frame constant.
  std::vector<labelgen::HandFlags> one_hand(n, labelgen::HandFlags{false, true});
  const auto ph = labelgen::apply_missing_hand_rules(one_hand, poses);
  bool all_sentinel = true;
  for (int t = 0; t < n; ++t) all_sentinel = all_sentinel && ph.sentinel[t][0] && ph.keep[t];
  const auto cam = geom::CameraModel::look_at({0, -0.3, 0.8}, {0, 0.45, 0}, 450, 450, 640, 480);
  const std::vector<geom::CameraModel> cams(n, cam);
  labelgen::LabelConfig lc;
  lc.horizon = 4;
  const auto labels =
      labelgen::make_labels(ph.poses, cams, labelgen::HomographyLookup::static_camera(), lc, ph.sentinel);
  for (const auto& pair : labels)
    for (const auto& w : pair[0].waypoints) all_sentinel = all_sentinel && w == lc.sentinel;
  o.require(all_sentinel, "never-visible hand gets sentinel labels on every frame");
  return o;
}

// ---------------------------------------------------------------------------
// 5. DDPM

Outcome ddpm() {
  Outcome o;
  const nn::DiffusionSchedule s;
  bool schedule_ok = s.steps == 100 && std::abs(s.betas.front() - 1e-4) < 1e-15 &&
                     std::abs(s.betas.back() - 0.02) < 1e-15;
  for (int t = 0; t < s.steps; ++t) {
    schedule_ok = schedule_ok && s.betas[t] > 0 && s.betas[t] < 1 && s.alpha_bars[t] > 0 && s.alpha_bars[t] < 1;
    schedule_ok = schedule_ok && std::abs(s.alphas[t] - (1 - s.betas[t])) < 1e-15;
    if (t > 0) schedule_ok = schedule_ok && s.alpha_bars[t] < s.alpha_bars[t - 1];
  }
  o.require(schedule_ok, "schedule invariants (betas in (0,1), alpha_bar decreasing)");

  // Zero head: the predicted noise is 0, so the loss is ||noise||^2 with
  // expectation A * action_dim.
  auto cfg = small_model();
  cfg.chunk_len = 8;
  auto zp = perturbed(cfg, 501);
  const auto& last = zp.diffusion_head().back();
  zp.param_vec(last.w).setZero();
  zp.param_vec(last.b).setZero();
  Rng rng(502);
  nn::PolicyBatch pb{random_matrix(cfg.feature_dim, 1, rng), random_matrix(cfg.embed_dim, 1, rng),
                     random_matrix(cfg.chunk_size(), 1, rng)};
  double total = 0.0;
  const int n = 10000;
  for (int k = 0; k < n; ++k) total += nn::loss_policy(zp, pb, s, rng, 0.0);
  const double expect = cfg.chunk_len * cfg.action_dim;
  const double ratio = total / n / expect;
  o.require(std::abs(ratio - 1.0) < 0.05, "zero head loss " + fmt("%.2f", total / n) + " vs " + fmt("%.0f", expect));

  // Bimodal chunk set.
  auto bcfg = small_model();
  bcfg.diffusion_widths = {256, 256};
  train::RobotFrames r;
  Rng brng(3);
  const int m = 64;
  r.y = random_matrix(bcfg.feature_dim, 1, brng).replicate(1, m);
  r.z = random_matrix(bcfg.embed_dim, 1, brng, 0.3).replicate(1, m);
  nn::Vector c(bcfg.chunk_size());
  for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = i % 2 == 0 ? 0.5 : -0.3;
  r.chunks.resize(bcfg.chunk_size(), m);
  for (int j = 0; j < m; ++j) r.chunks.col(j) = j % 2 == 0 ? c : nn::Vector(-c);
  nn::ModelParams p(bcfg);
  Rng init(8);
  p.init(init);
  train::TrainConfig tc;
  tc.lr = 1e-3;
  tc.cotrain_steps = 3000;
  tc.warmup = 600;
  tc.batch_robot = 64;
  tc.seed = 5;
  train::cotrain(train::HumanFrames{}, r, p, tc);
  const nn::Matrix f = nn::encoder_forward(p, r.y.leftCols(1).replicate(1, 1000), r.z.leftCols(1).replicate(1, 1000));
  Rng srng(5);
  const nn::Matrix samples = nn::ddpm_sample(p, f, s, srng);
  int plus = 0, near = 0;
  for (int j = 0; j < 1000; ++j) {
    const double proj = samples.col(j).dot(c) / c.squaredNorm();
    plus += proj > 0;
    near += std::abs(std::abs(proj) - 1.0) < 0.25;
  }
  o.require(plus >= 300 && plus <= 700, "mode frequencies " + std::to_string(plus) + "/" + std::to_string(1000 - plus));
  o.require(near >= 900, std::to_string(near) + " of 1000 samples within 0.25 of a mode");
  return o;
}

// ---------------------------------------------------------------------------
// 6. Co-training loss

train::HumanFrames synthetic_human(const nn::ModelConfig& cfg, int clips, int per_clip, std::uint64_t seed) {
  Rng rng(seed);
  const int n = clips * per_clip;
  train::HumanFrames h;
  h.x = random_matrix(cfg.feature_dim, n, rng);
  h.z = random_matrix(cfg.embed_dim, n, rng, 0.3);
  h.target = (random_matrix(cfg.keypoint_outputs(), n, rng, 0.2).array() + 0.5).matrix();
  h.mask = nn::Matrix::Ones(cfg.keypoint_outputs(), n);
  h.clips = clips;
  for (int i = 0; i < n; ++i) h.clip.push_back(i / per_clip);
  return h;
}

train::RobotFrames synthetic_robot(const nn::ModelConfig& cfg, int n, std::uint64_t seed) {
  Rng rng(seed);
  train::RobotFrames r;
  r.y = random_matrix(cfg.feature_dim, n, rng);
  r.z = random_matrix(cfg.embed_dim, n, rng, 0.3);
  r.chunks = random_matrix(cfg.chunk_size(), n, rng, 0.5);
  return r;
}

Outcome cotrain_loss() {
  Outcome o;
  const auto cfg = small_model();
  const auto h = synthetic_human(cfg, 4, 10, 601);
  const auto r = synthetic_robot(cfg, 30, 602);
  train::TrainConfig tc;
  o.require(tc.lambda == 10.0, "default lambda is 10");
  tc.lr = 1e-3;
  tc.cotrain_steps = 300;
  tc.warmup = 50;
  tc.batch_human = 8;
  tc.batch_robot = 8;
  nn::ModelParams init(cfg);
  Rng irng(603);
  init.init(irng);

  auto p = init;
  const auto log = train::cotrain(h, r, p, tc);
  double worst = 0.0;
  for (const auto& rec : log.records) worst = std::max(worst, std::abs(rec.total - (rec.l2d + tc.lambda * rec.lpolicy)));
  o.require(log.records.size() == 300 && worst <= 1e-9, "max |total - (l2d + 10 lpolicy)| = " + fmt("%.1e", worst) + " over 300 steps");

  // Literal reading: co-training with lambda = 0 against the finetune arm
  // (empty human set, policy loss only) from the same start.
  auto zero = tc;
  zero.lambda = 0.0;
  auto a = init, b = init;
  const auto la = train::cotrain(h, r, a, zero);
  const auto lb = train::cotrain(train::HumanFrames{}, r, b, tc);
  o.require(a.values() == b.values(), "lambda = 0 trajectory bitwise equal to the finetune arm");

  // What the objective does imply with lambda = 0: robot data has no influence.
  auto c = init, d = init;
  train::cotrain(h, synthetic_robot(cfg, 30, 604), c, zero);
  train::cotrain(h, synthetic_robot(cfg, 45, 605), d, zero);
  o.notes.push_back(std::string("info: with lambda = 0 the robot data has no influence: ") +
                    (c.values() == d.values() ? "yes" : "NO"));
  return o;
}

// ---------------------------------------------------------------------------
// 11. Determinism and I/O

Outcome determinism() {
  Outcome o;
  const auto dir = fs::temp_directory_path() / "masq_acceptance_io";
  fs::remove_all(dir);

  auto world = simenv::WorldConfig{};
  std::vector<dataset::ClipBundle> clips;
  robotize::RobotizeConfig rc;
  for (int i = 0; i < 4; ++i) {
    auto scene = simenv::SceneConfig::defaults(simenv::Task::ScrapePotato, 10 + i);
    scene.embodiment = simenv::Embodiment::HandAppearance;
    auto clip = simenv::gen_human_clip(scene, 1100 + i);
    robotize::robotize_clip(clip, rc);
    clips.push_back(std::move(clip));
  }
  const auto demos = simenv::gen_robot_demos(simenv::Task::ScrapePotato, 3, 9,
                                             simenv::SceneConfig::defaults(simenv::Task::ScrapePotato));
  bool bundles_ok = true;
  for (const auto& c : clips) {
    const auto bytes = dataset::encode_bundle(c);
    bundles_ok = bundles_ok && dataset::decode_bundle(bytes) == c && dataset::encode_bundle(dataset::decode_bundle(bytes)) == bytes;
  }
  dataset::save_dataset(dir / "human", clips, dataset::DatasetManifest{});
  dataset::save_dataset(dir / "robot", demos, dataset::DatasetManifest{});
  bundles_ok = bundles_ok && dataset::load_dataset(dir / "human" / "manifest.txt") == clips &&
               dataset::load_dataset(dir / "robot" / "manifest.txt") == demos;
  const auto m = dataset::read_manifest(dir / "human" / "manifest.txt");
  bundles_ok = bundles_ok && dataset::parse_manifest(dataset::format_manifest(m)).clips == m.clips;
  o.require(bundles_ok, "bundle, dataset and manifest round trips bitwise");

  // Checkpoint round trip at binary32 precision.
  const auto cfg = small_model();
  auto p = perturbed(cfg, 1101);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.values()(i) = static_cast<float>(p.values()(i));
  nn::save_checkpoint(dir / "m.ckpt", p, {});
  o.require(nn::load_checkpoint(dir / "m.ckpt").values() == p.values(), "checkpoint round trip bitwise");

  // Training and evaluation on the generated data, twice.
  nn::ModelConfig mc;
  const auto human = train::human_frames(clips, mc);
  const auto robot = train::robot_frames(demos, mc);
  train::TrainConfig tc;
  tc.pretrain_steps = 40;
  tc.cotrain_steps = 40;
  tc.warmup = 5;
  tc.seed = 3;
  auto run = [&] {
    auto q = experiments::initial_params(mc, 3);
    const auto l1 = train::pretrain(human, q, tc);
    const auto l2 = train::cotrain(human, robot, q, tc);
    const auto e = train::evaluate(q, simenv::SceneConfig::defaults(simenv::Task::ScrapePotato), 6, 77,
                                   std::vector<int>{1, 2});
    std::ostringstream os;
    os << l1.to_csv() << l2.to_csv() << q.checksum();
    for (const auto& rep : e.reports) os << simenv::rollout_csv_row("r", rep);
    return os.str();
  };
  o.require(run() == run(), "training and evaluation bitwise reproducible");

  bool chain = true;
  for (std::uint64_t seed : {7ULL, 1ULL, 12345ULL})
    for (std::size_t n : {1u, 10u, 57u, 200u}) {
      const auto a = dataset::subsample_indices(n, 0.1, seed);
      const auto b = dataset::subsample_indices(n, 0.5, seed);
      const auto c = dataset::subsample_indices(n, 1.0, seed);
      chain = chain && std::includes(b.begin(), b.end(), a.begin(), a.end()) &&
              std::includes(c.begin(), c.end(), b.begin(), b.end()) && c.size() == n &&
              dataset::subsample_indices(n, 0.5, seed) == b;
    }
  o.require(chain, "subsample subset chain");
  fs::remove_all(dir);
  return o;
}

// ---------------------------------------------------------------------------
// 12. Scoring

Outcome scoring() {
  Outcome o;
  bool thirds = true;
  for (auto task : simenv::kTasks)
    for (std::uint64_t seed = 0; seed < 10; ++seed)
      for (int k = 0; k <= 3; ++k) {
        simenv::Expert e(task, seed, {}, k);
        const auto r = simenv::rollout(simenv::SceneConfig::defaults(task),
                                       [&](const simenv::EnvState& s) { return e.act(s); }, seed);
        thirds = thirds && r.score == k / 3.0;
      }
  o.require(thirds, "scripted policies completing 0/1/2/3 subtasks score 0, 1/3, 2/3, 1 exactly");

  // The second subtask's predicate satisfied before the first is not credited.
  simenv::Env env(simenv::SceneConfig::defaults(simenv::Task::StackPots));
  env.reset(4);
  auto s = env.state();
  s.objects[1] = s.objects[0];
  s.arms[0].pos = s.objects[0];
  s.arms[0].held = 1;
  s.arms[0].grip = 0.0;
  env.set_state(s);
  auto open = simenv::hold_action(s);
  open[2] = 1.0;
  env.step(open);
  bool ordered = env.predicate(1) && env.completed() == 0;
  for (int i = 0; i < 5; ++i) env.step(simenv::hold_action(env.state()));
  ordered = ordered && env.completed() == 0;

  Rng rng(1201);
  for (auto task : simenv::kTasks) {
    simenv::Env e2(simenv::SceneConfig::defaults(task));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      e2.reset(seed);
      for (int t = 0; t < 100; ++t) {
        simenv::Action a;
        for (auto& v : a) v = rng.uniform(-1, 1);
        e2.step(a);
        const auto& d = e2.state().done;
        ordered = ordered && (!d[1] || d[0]) && (!d[2] || d[1]);
      }
    }
  }
  o.require(ordered, "out-of-order completion never credited");
  return o;
}

// ---------------------------------------------------------------------------
// 7-10. Trends on the synthetic benchmark

std::string describe(const experiments::ConditionResult& r) {
  return r.condition.name() + " OOD " + fmt("%.3f", r.ood_mean()) + " +- " + fmt("%.3f", r.ood_sem()) + " ID " +
         fmt("%.3f", r.id_mean());
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };

  struct Row {
    int id;
    std::string name;
    double budget;  // seconds
    bool pass;
    double seconds;
    std::vector<std::string> notes;
  };
  std::vector<Row> rows;
  auto report = [&](int id, const std::string& name, double budget, Outcome o, double seconds) {
    const bool in_time = seconds < budget;
    if (!in_time) o.notes.push_back("FAILED runtime over budget");
    const bool pass = o.pass && in_time;
    std::string line = std::string(pass ? "PASS" : "FAIL") + "  " + std::to_string(id) + ". " + name + " (" +
                       fmt("%.1f", seconds) + " s, budget " + fmt("%.0f", budget) + " s)";
    std::cout << line << std::endl;
    for (const auto& n : o.notes) std::cout << "        " << n << std::endl;
    rows.push_back({id, name, budget, pass, seconds, o.notes});
  };
  auto timed = [&](int id, const std::string& name, double budget, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    report(id, name, budget, o, since(t0));
  };

  timed(1, "gradient correctness", 60, gradients);
  timed(2, "homography oracle", 10, homography);
  timed(3, "label-warp oracle", 30, label_warp);
  timed(4, "filter exactness", 5, filter_rules);
  timed(5, "DDPM sanity", 300, ddpm);
  timed(6, "co-training loss decomposition", 120, cotrain_loss);

  if (wanted(7) || wanted(8) || wanted(9) || wanted(10)) {
    // One study serves all four trend criteria; runtimes are cumulative from
    // the start of the study, so each is an upper bound on a standalone run.
    const auto t0 = Clock::now();
    const auto cfg = experiments::ExperimentConfig::desk_defaults();
    std::optional<experiments::Study> study;
    try {
      study.emplace(cfg, experiments::build_corpus(cfg),
                    [&](const std::string& m) { std::cerr << "[" << fmt("%6.0f", since(t0)) << " s] " << m << std::endl; });
    } catch (const std::exception& e) {
      std::cerr << "study setup failed: " << e.what() << std::endl;
    }
    const experiments::Condition full{true, true, 1.0}, no_overlay{false, true, 1.0}, finetune{true, false, 1.0};
    auto trend = [&](int id, const std::string& name, double budget, const std::function<Outcome()>& f) {
      if (!wanted(id)) return;
      Outcome o;
      if (!study) {
        o.require(false, "study could not be set up");
      } else {
        try {
          o = f();
        } catch (const std::exception& e) {
          o.require(false, std::string("exception: ") + e.what());
        }
      }
      report(id, name, budget, o, since(t0));
    };
    trend(7, "overlay ablation trend", 900, [&] {
      Outcome o;
      const auto a = study->result(full), b = study->result(no_overlay);
      const double gap = 100 * (a.ood_mean() - b.ood_mean());
      o.notes.push_back(describe(a));
      o.notes.push_back(describe(b));
      o.require(gap >= 15.0, "overlay gain " + fmt("%.1f", gap) + " points (need >= 15)");
      return o;
    });
    trend(8, "co-training ablation trend", 900, [&] {
      Outcome o;
      const auto a = study->result(full), b = study->result(finetune);
      const double gap = 100 * (a.ood_mean() - b.ood_mean());
      o.notes.push_back(describe(a));
      o.notes.push_back(describe(b));
      o.require(gap >= 20.0, "co-training gain " + fmt("%.1f", gap) + " points (need >= 20)");
      return o;
    });
    trend(10, "ID vs OOD trend", 900, [&] {
      Outcome o;
      const auto a = study->result(full), b = study->result(finetune);
      o.notes.push_back(describe(a) + " drop " + fmt("%.3f", a.drop()));
      o.notes.push_back(describe(b) + " drop " + fmt("%.3f", b.drop()));
      for (std::size_t i = 0; i < a.seeds.size(); ++i) {
        o.notes.push_back("seed " + std::to_string(a.seeds[i].seed) + ": drop " +
                          fmt("%.3f", a.seeds[i].id.mean - a.seeds[i].ood.mean) + " vs " +
                          fmt("%.3f", b.seeds[i].id.mean - b.seeds[i].ood.mean));
      }
      o.require(a.drop() < b.drop(), "full method drop smaller than the pretrain-then-finetune arm");
      return o;
    });
    trend(9, "data scaling trend", 1800, [&] {
      Outcome o;
      std::vector<experiments::ConditionResult> rs;
      for (const auto& c : experiments::scaling_conditions(cfg.fractions)) rs.push_back(study->result(c));
      for (const auto& r : rs)
        o.notes.push_back("fraction " + fmt("%.2f", r.condition.fraction) + ": OOD " + fmt("%.3f", r.ood_mean()) +
                          " +- " + fmt("%.3f", r.ood_sem()));
      for (std::size_t i = 0; i + 1 < rs.size(); ++i) {
        const double slack = std::max(rs[i].ood_sem(), rs[i + 1].ood_sem());
        o.require(rs[i + 1].ood_mean() >= rs[i].ood_mean() - slack,
                  "fraction " + fmt("%.2f", rs[i + 1].condition.fraction) + " not below " +
                      fmt("%.2f", rs[i].condition.fraction) + " by more than 1 SEM");
      }
      const double gap = 100 * (rs.back().ood_mean() - rs.front().ood_mean());
      o.require(gap >= 20.0, "100% over 0% by " + fmt("%.1f", gap) + " points (need >= 20)");
      return o;
    });
  }

  timed(11, "determinism and I/O", 60, determinism);
  timed(12, "scoring protocol", 10, scoring);

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });
  int failed = 0;
  std::cout << "\nsummary" << std::endl;
  for (const auto& r : rows) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.id << ". " << r.name << std::endl;
    failed += r.pass ? 0 : 1;
  }
  std::cout << (rows.size() - static_cast<std::size_t>(failed)) << " of " << rows.size() << " criteria passed"
            << std::endl;
  return std::min(failed, 100);
}
