#include <doctest.h>

#include <cmath>
#include <set>

#include "masq/dataset.hpp"
#include "masq/error.hpp"
#include "masq/filter.hpp"
#include "masq/retarget.hpp"
#include "masq/simenv.hpp"

using namespace masq;
using namespace masq::simenv;

namespace {

double run_expert(Task task, std::uint64_t seed, int stop_after, std::array<bool, 3>* done = nullptr) {
  const auto scene = SceneConfig::defaults(task);
  Expert e(task, seed, {}, stop_after);
  const auto r = rollout(scene, [&](const EnvState& s) { return e.act(s); }, seed);
  if (done) *done = r.subtask_done;
  return r.score;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

EnvState arms_from_truth(const HumanClipTruth& truth, int t) {
  EnvState s;
  for (int a = 0; a < 2; ++a) {
    s.arms[a].pos = truth.grasp_world[t][a].head<2>();
    s.arms[a].grip = truth.grip[t][a];
  }
  return s;
}

}  // namespace

TEST_CASE("scripted policies score in thirds") {
  for (Task task : kTasks) {
    CAPTURE(task_name(task));
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      for (int k = 0; k <= 3; ++k) {
        std::array<bool, 3> done{};
        CHECK(run_expert(task, seed, k, &done) == k / 3.0);
        for (int i = 0; i < 3; ++i) CHECK(done[i] == (i < k));
      }
    }
  }
}

TEST_CASE("holding still scores zero") {
  for (Task task : kTasks) {
    const auto r = rollout(SceneConfig::defaults(task), [](const EnvState& s) { return hold_action(s); }, 3);
    CHECK(r.score == 0.0);
    CHECK(r.subtask_done == std::array<bool, 3>{false, false, false});
    CHECK(r.steps == 100);
  }
}

TEST_CASE("uniformly random actions rarely score") {
  for (Task task : kTasks) {
    Rng rng(99);
    double total = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto r = rollout(SceneConfig::defaults(task), [&](const EnvState&) {
        Action a;
        for (auto& v : a) v = rng.uniform(-1, 1);
        a[2] = rng.uniform();
        a[5] = rng.uniform();
        return a;
      }, seed);
      total += r.score;
    }
    CAPTURE(task_name(task));
    CHECK(total / 100 < 0.15);
  }
}

TEST_CASE("a later subtask satisfied first is never credited") {
  // Stack the medium pot into the large one while the small pot is still
  // inside: subtask 2's predicate fires before subtask 1 is done.
  const auto scene = SceneConfig::defaults(Task::StackPots);
  Env env(scene);
  env.reset(4);
  auto s = env.state();
  s.objects[1] = s.objects[0];
  s.arms[0].pos = s.objects[0];
  s.arms[0].held = 1;
  s.arms[0].grip = 0.0;
  env.set_state(s);
  Action open = hold_action(s);
  open[2] = 1.0;
  env.step(open);
  CHECK(env.predicate(1));
  CHECK(env.completed() == 0);
  // Holding the state does not count as a fresh event either.
  for (int i = 0; i < 5; ++i) env.step(hold_action(env.state()));
  CHECK(env.completed() == 0);
}

TEST_CASE("credited prefix is monotone along random rollouts") {
  for (Task task : kTasks) {
    Env env(SceneConfig::defaults(task));
    Rng rng(5);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      env.reset(seed);
      for (int t = 0; t < 100; ++t) {
        Action a;
        for (auto& v : a) v = rng.uniform(-1, 1);
        env.step(a);
        const auto& d = env.state().done;
        CHECK((!d[1] || d[0]));
        CHECK((!d[2] || d[1]));
      }
    }
  }
}

TEST_CASE("environment stepping is deterministic") {
  const auto scene = SceneConfig::defaults(Task::SweepChilis);
  Env a(scene), b(scene);
  a.reset(17);
  b.reset(17);
  Expert ea(scene.task, 1, {0.01, 0.7, 1.0, 0.003}), eb(scene.task, 1, {0.01, 0.7, 1.0, 0.003});
  for (int t = 0; t < 60; ++t) {
    a.step(ea.act(a.state()));
    b.step(eb.act(b.state()));
  }
  for (std::size_t i = 0; i < a.state().objects.size(); ++i) CHECK(a.state().objects[i] == b.state().objects[i]);
  CHECK(a.state().arms[0].pos == b.state().arms[0].pos);
  CHECK(a.state().done == b.state().done);
}

TEST_CASE("resets place objects inside their regions") {
  for (Task task : kTasks) {
    const auto scene = SceneConfig::defaults(task);
    Env env(scene);
    std::set<std::pair<double, double>> seen;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      env.reset(seed);
      const auto& objs = env.state().objects;
      for (std::size_t i = 0; i < objs.size(); ++i) CHECK(scene.regions[i].contains(objs[i]));
      seen.insert({objs[0].x(), objs[0].y()});
    }
    CHECK(seen.size() == 50);
  }
}

TEST_CASE("robot demos") {
  const auto demos = gen_robot_demos(Task::ScrapePotato, 50, 7);
  REQUIRE(demos.size() == 50);
  std::set<std::pair<float, float>> starts;
  for (const auto& d : demos) {
    CHECK(d.scene_style == 0);
    CHECK(d.source == dataset::Source::Robot);
    CHECK(d.actions.cols == 48);
    starts.insert({d.truth_ee.at(0, 0), d.features.at(0, 0)});
    const auto cams = dataset::camera_track(d);
    for (std::size_t t = 1; t < cams.size(); ++t) CHECK(cams[t].pose.translation == cams[0].pose.translation);
  }
  CHECK(starts.size() == 50);

  SUBCASE("open-loop replay completes the task") {
    for (Task task : kTasks) {
      for (const auto& d : gen_robot_demos(task, 5, 11)) {
        Env env(SceneConfig::defaults(task));
        env.reset(d.seed);
        for (int t = 0; t < d.frames(); ++t) env.step(chunk_actions(d, t).front());
        CHECK(env.score() == 1.0);
      }
    }
  }
  SUBCASE("chunks pad with the final action") {
    const auto& d = demos[0];
    const int last = d.frames() - 1;
    const auto chunk = chunk_actions(d, last);
    for (const auto& a : chunk) CHECK(a == chunk.front());
    CHECK(chunk_actions(d, 0)[1] == chunk_actions(d, 1)[0]);
  }
  CHECK_THROWS_AS(gen_robot_demos(Task::StackPots, 0, 1), InvalidArgument);
}

TEST_CASE("human clips are reproducible") {
  auto scene = SceneConfig::defaults(Task::StackPots, 2);
  scene.camera.jolt_fraction = 0.1;
  const auto a = gen_human_clip(scene, 42);
  const auto b = gen_human_clip(scene, 42);
  CHECK(a == b);
  CHECK(dataset::encode_bundle(a) == dataset::encode_bundle(b));
  CHECK_FALSE(gen_human_clip(scene, 43) == a);
  CHECK(a.frames() == 40);
  CHECK(a.feature_dim() == scene.world.feature_dim());
}

TEST_CASE("retargeting emitted hands recovers the grasp points") {
  for (Task task : kTasks) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto scene = SceneConfig::defaults(task, 1);
      HumanClipTruth truth;
      const auto clip = gen_human_clip(scene, seed, {}, &truth);
      double worst = 0;
      int checked = 0;
      for (int t = 0; t < clip.frames(); ++t) {
        const auto flags = dataset::presence_at(clip, t);
        const auto cam = dataset::camera_at(clip, t);
        const auto to_world = cam.pose.inverse();
        for (Side side : kSides) {
          if (!flags[index_of(side)]) continue;
          const auto pose = retarget::fit_ee_pose(dataset::hand_at(clip, t, side));
          const Vec3 world = to_world.apply(pose.position);
          worst = std::max(worst, (world - truth.grasp_world[t][index_of(side)]).norm());
          CHECK(pose.grip == doctest::Approx(truth.grip[t][index_of(side)]).epsilon(1e-5));
          ++checked;
        }
      }
      CHECK(checked > 0);
      CHECK(worst < 1e-6);
    }
  }
}

TEST_CASE("overlay arm features match the robot rendering exactly") {
  auto scene = SceneConfig::defaults(Task::SweepChilis, 3);
  scene.embodiment = Embodiment::RobotOverlay;
  const FeatureModel model(scene.world);
  HumanClipTruth truth;
  const auto clip = gen_human_clip(scene, 8, {}, &truth);
  const int e0 = model.e_offset();
  const int e_len = 2 * scene.world.arm_dim;
  int matched = 0;
  for (int t = 0; t < clip.frames(); ++t) {
    const auto flags = dataset::presence_at(clip, t);
    if (!flags[0] || !flags[1]) continue;
    // Robot arms rendered at the same EE state under the same view and style.
    const auto expected = model.appearance(arms_from_truth(truth, t), dataset::camera_at(clip, t),
                                           Embodiment::RobotOverlay, scene.scene_style);
    for (int i = 0; i < e_len; ++i) CHECK(clip.features.at(t, e0 + i) == static_cast<float>(expected(i)));
    ++matched;
  }
  CHECK(matched > 10);

  // Robot demos carry the same E block for the same arm state. Replaying the
  // stored (binary32) actions only approximates the recorded states.
  const auto demo = gen_robot_demos(scene.task, 1, 3, scene).front();
  Env env(scene);
  env.reset(demo.seed);
  for (int t = 0; t < demo.frames(); ++t) {
    const auto expected = model.appearance(env.state(), scene.camera.nominal(), Embodiment::RobotOverlay, 0);
    for (int i = 0; i < e_len; ++i) CHECK(demo.features.at(t, e0 + i) == doctest::Approx(expected(i)).epsilon(1e-5));
    env.step(chunk_actions(demo, t).front());
  }
}

TEST_CASE("hand appearance sits further from robot features than the overlay") {
  const WorldConfig world;
  const FeatureModel model(world);
  const auto cam = CameraConfig{}.nominal();
  Rng rng(12);
  Env env(SceneConfig::defaults(Task::StackPots));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    env.reset(seed);
    auto s = env.state();
    for (auto& arm : s.arms) {
      arm.pos += Vec2(rng.uniform(-0.1, 0.1), rng.uniform(-0.05, 0.2));
      arm.grip = rng.uniform();
    }
    const auto robot = model.features(s, cam, Embodiment::RobotOverlay, 0, &rng);
    const auto overlay = model.features(s, cam, Embodiment::RobotOverlay, 0, &rng);
    const auto hand = model.features(s, cam, Embodiment::HandAppearance, 0, &rng);
    CHECK(cosine(hand, robot) < cosine(overlay, robot));
  }
}

TEST_CASE("jolted frames are exactly the ones the filter drops") {
  auto scene = SceneConfig::defaults(Task::ScrapePotato, 1);
  for (double fraction : {0.0, 0.1, 0.25}) {
    scene.camera.jolt_fraction = fraction;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      HumanClipTruth truth;
      const auto clip = gen_human_clip(scene, seed, {}, &truth);
      CHECK(truth.jolt_frames.size() == static_cast<std::size_t>(std::lround(fraction * 40)));
      const auto cams = dataset::camera_track(clip);
      const auto motions = filter::step_motions(cams);
      const filter::FilterConfig cfg;
      std::vector<int> violating;
      for (std::size_t t = 0; t < motions.size(); ++t) {
        if (motions[t].translation > cfg.max_translation || motions[t].rotation > cfg.max_rotation) {
          violating.push_back(static_cast<int>(t));
        }
      }
      CHECK(violating == truth.jolt_frames);
    }
  }
}

TEST_CASE("human clip visibility events") {
  const auto scene = SceneConfig::defaults(Task::StackPots, 1);
  HumanClipConfig always;
  always.occlusion_prob = 0.0;
  always.absent_prob = 0.0;
  always.late_start_prob = 1.0;
  const auto clip = gen_human_clip(scene, 3, always);
  CHECK(clip.presence.at(0, 0) == 0.f);
  CHECK(clip.presence.at(0, 1) == 0.f);
  // A missing hand contributes no arm appearance.
  const FeatureModel model(scene.world);
  for (int i = 0; i < 2 * scene.world.arm_dim; ++i) CHECK(clip.features.at(0, model.e_offset() + i) == 0.f);

  HumanClipConfig absent;
  absent.occlusion_prob = 0.0;
  absent.late_start_prob = 0.0;
  absent.absent_prob = 1.0;
  const auto one = gen_human_clip(scene, 5, absent);
  int missing_always = 0;
  for (int a = 0; a < 2; ++a) {
    bool any = false;
    for (int t = 0; t < one.frames(); ++t) any = any || one.presence.at(t, a) != 0.f;
    missing_always += !any;
  }
  CHECK(missing_always >= 1);
}

TEST_CASE("human clip annotations come from the task phrases") {
  const auto scene = SceneConfig::defaults(Task::SweepChilis, 2);
  const auto& phrases = task_phrases(scene.task);
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto clip = gen_human_clip(scene, seed);
    CHECK(std::find(phrases.begin(), phrases.end(), clip.annotation) != phrases.end());
    const auto z = dataset::embed_language(clip.annotation, scene.world.embed_dim);
    CHECK(clip.embedding.data[0] == static_cast<float>(z[0]));
    seen.insert(clip.annotation);
  }
  CHECK(seen.size() > 1);
}

TEST_CASE("scene config text round trip") {
  auto s = SceneConfig::defaults(Task::SweepChilis, 2);
  s.embodiment = Embodiment::HandAppearance;
  s.camera.jolt_fraction = 0.15;
  s.world.style_scale = 1.7;
  s.regions[2].hi = {0.11, 0.39};
  s.seed = 12345678901234ull;
  const auto back = SceneConfig::from_text(s.to_text());
  CHECK(back.to_text() == s.to_text());
  CHECK(back.regions[2].hi == s.regions[2].hi);
  CHECK(back.world.style_scale == 1.7);
  CHECK(back.seed == s.seed);

  CHECK_THROWS_AS(SceneConfig::from_text("task = juggle\n"), InvalidArgument);
  CHECK_THROWS_AS(SceneConfig::from_text("scene_style = 1\n"), FormatError);
  CHECK_THROWS_AS(SceneConfig::from_text("task = stack-pots\nregion.large_pot = 0 0 9 9\n"), InvalidArgument);
  CHECK_THROWS_AS(SceneConfig::from_text("task = stack-pots\nmax_steps = many\n"), FormatError);
}

TEST_CASE("action normalization") {
  const Vec2 p(0.2, 0.6);
  CHECK((denormalize_xy(normalize_xy(p)) - p).norm() < 1e-15);
  CHECK((normalize_xy({0.5, 0.75}) - Vec2(1.0, 1.0)).norm() < 1e-15);
  CHECK((normalize_xy({-0.5, 0.15}) - Vec2(-1.0, -1.0)).norm() < 1e-15);
}

TEST_CASE("batched rollouts match per-step execution") {
  const auto scene = SceneConfig::defaults(Task::StackPots);
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  // A policy that always asks to hold at the rest pose.
  const BatchPolicy rest = [](const Eigen::MatrixXd& obs, Rng&) {
    Eigen::MatrixXd out(48, obs.cols());
    const auto a = make_action(rest_position(0), 1.0, rest_position(1), 1.0);
    for (int j = 0; j < 8; ++j)
      for (int d = 0; d < 6; ++d) out.row(j * 6 + d).setConstant(a[d]);
    return out;
  };
  const auto reports = rollout_batch(scene, rest, seeds, {}, 0);
  REQUIRE(reports.size() == 3);
  for (const auto& r : reports) {
    CHECK(r.score == 0.0);
    CHECK(r.steps == 100);
  }
  const BatchPolicy bad = [](const Eigen::MatrixXd& obs, Rng&) { return Eigen::MatrixXd::Zero(5, obs.cols()); };
  CHECK_THROWS_AS(rollout_batch(scene, bad, seeds, {}, 0), DimensionMismatch);
  CHECK(rollout_csv_header() == "run,seed,subtask_1,subtask_2,subtask_3,score,steps\n");
  CHECK(rollout_csv_row("x", reports[0]) == "x,1,0,0,0,0,100\n");
}
