#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "masq/dataset.hpp"
#include "masq/nn.hpp"
#include "masq/robotize.hpp"
#include "masq/simenv.hpp"
#include "masq/train.hpp"

namespace masq::experiments {

// Desk-scale versions of the overlay / co-training ablation, the human-data
// scaling study and the in- versus out-of-distribution comparison. All arms
// share one generated corpus; only training and evaluation depend on the seed.

struct ExperimentConfig {
  simenv::Task task = simenv::Task::ScrapePotato;
  int human_clips = 200;
  int robot_demos = 50;
  std::uint64_t data_seed = 7;
  int first_human_style = 100;  // human clip i is filmed in style first_human_style + i
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int ood_rollouts = 50;  // per seed
  int id_rollouts = 50;   // per seed
  std::vector<int> ood_styles{1, 2, 3};
  std::vector<double> fractions{0.0, 0.1, 0.5, 1.0};
  simenv::HumanClipConfig human;
  robotize::RobotizeConfig robotize;
  nn::ModelConfig model;
  train::TrainConfig train;
  simenv::RolloutConfig rollout;

  /// The configuration the reported trends were produced with.
  static ExperimentConfig desk_defaults();

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  void apply(const std::map<std::string, std::string>& m);
};

struct Corpus {
  std::vector<dataset::ClipBundle> raw;      // human clips as filmed
  std::vector<dataset::ClipBundle> overlay;  // robotized with the robot rendering
  std::vector<dataset::ClipBundle> plain;    // labelled and filtered, hand appearance kept
  std::vector<dataset::ClipBundle> robot;
};

Corpus build_corpus(const ExperimentConfig& cfg);

/// Fresh weights for a training seed; every arm trained with that seed starts here.
nn::ModelParams initial_params(const nn::ModelConfig& model, std::uint64_t seed);

struct Condition {
  bool overlay = true;
  bool cotrain = true;
  double fraction = 1.0;  // share of human clips used; 0 trains on robot data alone

  std::string name() const;
  bool operator<(const Condition& o) const;
};

struct SeedScores {
  std::uint64_t seed = 0;
  train::EvalResult ood, id;
};

struct ConditionResult {
  Condition condition;
  std::vector<SeedScores> seeds;

  /// Means over all rollouts of all seeds; SEM over the same pooled rollouts.
  double ood_mean() const;
  double ood_sem() const;
  double id_mean() const;
  double id_sem() const;
  double drop() const { return id_mean() - ood_mean(); }
};

using Progress = std::function<void(const std::string&)>;

/// Trains and evaluates conditions, caching pretrained encoders and finished
/// runs so that the ablation and the scaling study can share work.
class Study {
 public:
  Study(ExperimentConfig cfg, Corpus corpus, Progress progress = {});

  const ExperimentConfig& config() const { return cfg_; }
  const Corpus& corpus() const { return corpus_; }

  const SeedScores& run(const Condition& c, std::uint64_t seed);
  ConditionResult result(const Condition& c);

  /// Trained parameters of a finished run (runs it if needed).
  const nn::ModelParams& params(const Condition& c, std::uint64_t seed);

 private:
  std::vector<std::size_t> human_subset(double fraction) const;
  const nn::ModelParams& pretrained(bool overlay, double fraction, std::uint64_t seed);
  void log(const std::string& msg) const;

  ExperimentConfig cfg_;
  Corpus corpus_;
  Progress progress_;
  std::map<std::tuple<bool, double, std::uint64_t>, nn::ModelParams> pretrained_;
  std::map<std::pair<Condition, std::uint64_t>, std::pair<nn::ModelParams, SeedScores>> runs_;
};

/// The four {overlay, no overlay} x {co-train, finetune} conditions.
std::vector<Condition> ablation_grid();
std::vector<Condition> scaling_conditions(const std::vector<double>& fractions);

/// condition,seed_<s>...,mean,sem with OOD scores.
std::string ablation_csv(const std::vector<ConditionResult>& results);
/// fraction,seed_<s>...,mean,sem with OOD scores.
std::string scaling_csv(const std::vector<ConditionResult>& results);
/// condition,id_mean,id_sem,ood_mean,ood_sem,drop
std::string id_ood_csv(const std::vector<ConditionResult>& results);

struct Bar {
  std::string label;
  double value = 0.0;
  double sem = 0.0;
};

/// Reads a CSV written by the functions above: first column labels the bar,
/// `mean` and `sem` columns give height and error bar (or the named columns).
std::vector<Bar> bars_from_csv(const std::string& csv, const std::string& value_col = "mean",
                               const std::string& sem_col = "sem");
/// Static bar chart with +-SEM whiskers; values are scores in [0, 1].
std::string bar_chart_svg(const std::vector<Bar>& bars, const std::string& title);

}  // namespace masq::experiments
