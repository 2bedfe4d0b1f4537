#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "masq/dataset.hpp"
#include "masq/error.hpp"
#include "masq/experiments.hpp"
#include "masq/io.hpp"
#include "masq/nn.hpp"
#include "masq/robotize.hpp"
#include "masq/simenv.hpp"
#include "masq/train.hpp"

namespace fs = std::filesystem;
using namespace masq;
using experiments::ExperimentConfig;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kDataError = 2;

// Input problems detected before any output is produced.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> tokens(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

bool is_flag(const CLI::Option* opt) { return opt->get_type_size() == 0; }
bool is_list(const CLI::Option* opt) { return opt->get_items_expected_max() > 1; }

std::string option_key(const CLI::Option* opt) { return opt->get_lnames().front(); }

bool skipped(const CLI::Option* opt) {
  const auto key = option_key(opt);
  return key == "help" || key == "config" || key == "out";
}

/// "key = value" lines; later lines for list options append. Keys are long
/// flag names without dashes.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path.string());
  std::istringstream is(io::read_text(path));
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(path.string() + ":" + std::to_string(n) + ": expected key = value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

/// Config file entries take precedence over flags given on the command line.
void apply_config_file(CLI::App& cmd, const fs::path& path) {
  std::map<std::string, std::vector<std::string>> grouped;
  for (const auto& [k, v] : read_config_file(path)) grouped[k].push_back(v);
  for (const auto& [key, values] : grouped) {
    CLI::Option* opt = nullptr;
    for (auto* o : cmd.get_options())
      if (!o->get_lnames().empty() && option_key(o) == key) opt = o;
    if (!opt || skipped(opt)) throw ValidationError("unknown config key: " + key);
    opt->clear();
    for (const auto& v : values) {
      if (is_list(opt)) {
        for (const auto& t : tokens(v)) opt->add_result(t);
      } else {
        opt->add_result(v);
      }
    }
    opt->run_callback();
  }
}

std::string config_manifest(const CLI::App& cmd) {
  std::ostringstream os;
  os << "# masq " << cmd.get_name() << "\n";
  for (const auto* opt : cmd.get_options()) {
    if (opt->get_lnames().empty() || skipped(opt)) continue;
    const auto key = option_key(opt);
    if (is_flag(opt)) {
      if (opt->count() > 0) os << key << " = true\n";
      continue;
    }
    if (opt->count() > 0) {
      if (key == "set") {
        for (const auto& r : opt->results()) os << key << " = " << r << "\n";
        continue;
      }
      std::string joined;
      for (const auto& r : opt->results()) joined += (joined.empty() ? "" : " ") + r;
      os << key << " = " << joined << "\n";
    } else if (const auto& def = opt->get_default_str(); !def.empty() && def != "{}" && def != "[]") {
      auto d = def;
      if (is_list(opt) && d.size() >= 2 && d.front() == '[' && d.back() == ']') {
        d = d.substr(1, d.size() - 2);
        for (auto& c : d)
          if (c == ',') c = ' ';
      }
      os << key << " = " << d << "\n";
    }
  }
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  io::write_text_atomic(path, text);
}

fs::path require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ValidationError(what + " is required");
  if (!fs::is_regular_file(path)) throw ValidationError(what + " not found: " + path);
  return path;
}

std::map<std::string, std::string> parse_sets(const std::vector<std::string>& sets,
                                              const ExperimentConfig& cfg) {
  const auto known = cfg.to_map();
  std::map<std::string, std::string> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got " + s);
    const auto key = trim(s.substr(0, eq));
    if (!known.count(key)) throw ValidationError("unknown setting " + key);
    out[key] = trim(s.substr(eq + 1));
  }
  return out;
}

/// Keeps only the keys an ExperimentConfig understands.
std::map<std::string, std::string> config_keys(const std::map<std::string, std::string>& m) {
  const auto known = ExperimentConfig{}.to_map();
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : m)
    if (known.count(k)) out[k] = v;
  return out;
}

std::vector<dataset::ClipBundle> load_clips(const fs::path& manifest, ExperimentConfig* cfg = nullptr) {
  const auto m = dataset::read_manifest(manifest);
  if (cfg) cfg->apply(config_keys(m.config));
  return dataset::load_dataset(manifest, m);
}

dataset::DatasetManifest header_for(const ExperimentConfig& cfg) {
  dataset::DatasetManifest h;
  h.horizon = cfg.robotize.labels.horizon;
  h.feature_dim = cfg.robotize.world.feature_dim();
  h.embed_dim = cfg.robotize.world.embed_dim;
  h.config = cfg.to_map();
  return h;
}

void save_model(const fs::path& path, const nn::ModelParams& p, const ExperimentConfig& cfg,
                const std::string& phase, std::int64_t steps) {
  nn::CheckpointMeta meta;
  meta.step = steps;
  meta.extra = cfg.to_map();
  meta.extra["phase"] = phase;
  fs::create_directories(path.parent_path());
  nn::save_checkpoint(path, p, meta);
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

// ---------------------------------------------------------------------------

struct Common {
  std::string out;
  std::string config;
  std::vector<std::string> sets;
};

struct Options {
  Common common;
  std::string task;
  std::string in, human, robot, init, checkpoint, csv, title = "OOD score by condition";
  std::string value_col = "mean", sem_col = "sem";
  int human_clips = -1, robot_demos = -1, rollouts = -1, id_rollouts = -1, steps = -1;
  int warmup = -1, batch_human = -1, batch_robot = -1, checkpoint_interval = -1, n_seeds = 3;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::vector<int> styles;
  std::vector<double> fractions;
  std::optional<double> lambda, lr;
  bool overlay = false, no_overlay = false, cotrain = false, finetune = false;
  bool clip_uniform = false, alternating = false;
  std::string homography;
};

// Required inputs are checked after the config file is applied, so a run can
// be repeated from its config manifest alone.
void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--out", c.out, "Output directory (required)");
  cmd->add_option("--config", c.config, "Config file (key = value); its entries override flags");
  cmd->add_option("--set", c.sets, "Override any setting as key=value (repeatable)")->allow_extra_args(false);
}

void resolve_unchecked(ExperimentConfig& cfg, const Options& o);

/// Applies flags then --set entries on top of `cfg`.
void resolve(ExperimentConfig& cfg, const Options& o) {
  try {
    resolve_unchecked(cfg, o);
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
}

void resolve_unchecked(ExperimentConfig& cfg, const Options& o) {
  if (!o.task.empty()) cfg.task = simenv::parse_task(o.task);
  if (o.human_clips >= 0) cfg.human_clips = o.human_clips;
  if (o.robot_demos >= 0) cfg.robot_demos = o.robot_demos;
  if (o.rollouts >= 0) cfg.ood_rollouts = o.rollouts;
  if (o.id_rollouts >= 0) cfg.id_rollouts = o.id_rollouts;
  if (!o.styles.empty()) cfg.ood_styles = o.styles;
  if (!o.fractions.empty()) cfg.fractions = o.fractions;
  if (o.lambda) cfg.train.lambda = *o.lambda;
  if (o.lr) cfg.train.lr = *o.lr;
  if (o.warmup >= 0) cfg.train.warmup = o.warmup;
  if (o.batch_human >= 0) cfg.train.batch_human = o.batch_human;
  if (o.batch_robot >= 0) cfg.train.batch_robot = o.batch_robot;
  if (o.checkpoint_interval >= 0) cfg.train.checkpoint_interval = o.checkpoint_interval;
  if (o.clip_uniform) cfg.train.clip_uniform = true;
  if (o.alternating) cfg.train.alternating = true;
  if (o.overlay) cfg.robotize.overlay = true;
  if (o.no_overlay) cfg.robotize.overlay = false;
  if (!o.homography.empty()) cfg.robotize.apply({{"homography", o.homography}});
  if (!o.seeds.empty()) {
    cfg.seeds = o.seeds;
  } else if (o.seed) {
    cfg.seeds.clear();
    for (int i = 0; i < o.n_seeds; ++i) cfg.seeds.push_back(*o.seed + static_cast<std::uint64_t>(i));
  }
  if (o.seed) {
    cfg.data_seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  cfg.apply(parse_sets(o.common.sets, cfg));
  cfg.validate();
}

void add_training_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--seed", o.seed, "Training seed");
  cmd->add_option("--lr", o.lr, "Peak learning rate");
  cmd->add_option("--steps", o.steps, "Number of updates");
  cmd->add_option("--batch-human", o.batch_human, "Human frames per update");
  cmd->add_option("--init", o.init, "Start from this checkpoint instead of fresh weights");
  cmd->add_option("--checkpoint-interval", o.checkpoint_interval, "Write a checkpoint every N steps (0: final only)");
  cmd->add_flag("--clip-uniform", o.clip_uniform, "Sample a clip first, then a frame in it");
}

void add_study_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--task", o.task, "Task: stack-pots, scrape-potato or ...");
  cmd->add_option("--seed", o.seed, "Base seed: data seed and first training seed");
  cmd->add_option("--n-seeds", o.n_seeds, "Training seeds seed, seed+1, ... when --seeds is not given")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seeds", o.seeds, "Explicit training seeds");
  cmd->add_option("--human-clips", o.human_clips, "Number of human clips")->check(CLI::NonNegativeNumber);
  cmd->add_option("--robot-demos", o.robot_demos, "Number of robot demonstrations")->check(CLI::PositiveNumber);
  cmd->add_option("--rollouts", o.rollouts, "Out-of-distribution rollouts per seed")->check(CLI::PositiveNumber);
  cmd->add_option("--id-rollouts", o.id_rollouts, "In-distribution rollouts per seed")->check(CLI::PositiveNumber);
  cmd->add_option("--lambda", o.lambda, "Policy loss weight");
  cmd->add_option("--lr", o.lr, "Peak learning rate");
}

experiments::Progress stderr_progress() {
  return [](const std::string& msg) { std::cerr << msg << std::endl; };
}

// ---------------------------------------------------------------------------
// Commands. Each validates and loads inputs before creating the output
// directory, and writes its config manifest last.

std::string cmd_gen_data(const Options& o) {
  auto cfg = ExperimentConfig::desk_defaults();
  resolve(cfg, o);
  const auto corpus = experiments::build_corpus(cfg);
  const fs::path out = o.common.out;
  dataset::save_dataset(out / "human", corpus.raw, header_for(cfg));
  dataset::save_dataset(out / "robot", corpus.robot, header_for(cfg));
  return "gen-data: " + std::to_string(corpus.raw.size()) + " human clips, " +
         std::to_string(corpus.robot.size()) + " robot demos in " + o.common.out;
}

enum class Stage { Label, Filter, Full };

std::string cmd_robotize(const Options& o, Stage stage) {
  const auto in = require_file(o.in, "--in");
  auto cfg = ExperimentConfig::desk_defaults();
  auto clips = load_clips(in, &cfg);
  resolve(cfg, o);
  std::vector<filter::FilterReport> reports;
  filter::FilterReport total;
  for (auto& clip : clips) {
    if (clip.source != dataset::Source::Human) throw ValidationError("clip " + clip.clip_id + " is not a human clip");
    filter::FilterReport r;
    if (stage == Stage::Full) {
      r = robotize::robotize_clip(clip, cfg.robotize);
    } else {
      const auto traj = robotize::retarget_clip(clip, cfg.robotize);
      if (stage == Stage::Label) {
        robotize::label_clip(clip, traj, cfg.robotize);
      } else {
        r = robotize::filter_clip(clip, traj, cfg.robotize).report;
      }
    }
    total.accumulate(r);
    reports.push_back(std::move(r));
  }
  const fs::path out = o.common.out;
  if (stage == Stage::Label) {
    dataset::save_dataset(out, clips, header_for(cfg));
    return "label: " + std::to_string(clips.size()) + " clips labelled";
  }
  dataset::save_dataset(out, clips, header_for(cfg), reports);
  write_text(out / "filter_report.txt", total.to_text());
  return std::string(stage == Stage::Full ? "robotize" : "filter") + ": " + std::to_string(clips.size()) +
         " clips, kept " + std::to_string(total.kept_frames) + " of " + std::to_string(total.total_frames) +
         " frames";
}

std::string cmd_pretrain(const Options& o) {
  const auto human_path = require_file(o.human, "--human");
  std::optional<fs::path> init;
  if (!o.init.empty()) init = require_file(o.init, "--init");
  auto cfg = ExperimentConfig::desk_defaults();
  const auto clips = load_clips(human_path, &cfg);
  resolve(cfg, o);
  if (o.steps >= 0) cfg.train.pretrain_steps = o.steps;
  cfg.train.validate();
  auto params = init ? nn::load_checkpoint(*init) : experiments::initial_params(cfg.model, cfg.train.seed);
  if (params.config().to_map() != cfg.model.to_map()) throw ValidationError("--init model does not match the configuration");
  const fs::path out = o.common.out;
  auto tc = cfg.train;
  if (tc.checkpoint_interval > 0) tc.checkpoint_dir = out / "checkpoints";
  const auto log = train::pretrain(train::human_frames(clips, cfg.model), params, tc);
  write_text(out / "train_log.csv", log.to_csv());
  save_model(out / "model.ckpt", params, cfg, "pretrain", cfg.train.pretrain_steps);
  return "pretrain: " + std::to_string(cfg.train.pretrain_steps) + " steps, final l2d " +
         fmt3(log.records.empty() ? 0.0 : log.records.back().l2d);
}

std::string cmd_cotrain(const Options& o) {
  const auto robot_path = require_file(o.robot, "--robot");
  if (o.cotrain && o.finetune) throw ValidationError("--cotrain and --finetune are exclusive");
  const bool use_human = !o.finetune;
  std::optional<fs::path> human_path;
  if (use_human) human_path = require_file(o.human, "--human (or pass --finetune)");
  std::optional<fs::path> init;
  if (!o.init.empty()) init = require_file(o.init, "--init");
  auto cfg = ExperimentConfig::desk_defaults();
  const auto robot = load_clips(robot_path, &cfg);
  std::vector<dataset::ClipBundle> human;
  if (human_path) human = load_clips(*human_path, &cfg);
  resolve(cfg, o);
  if (o.steps >= 0) cfg.train.cotrain_steps = o.steps;
  cfg.train.validate();
  auto params = init ? nn::load_checkpoint(*init) : experiments::initial_params(cfg.model, cfg.train.seed);
  if (params.config().to_map() != cfg.model.to_map()) throw ValidationError("--init model does not match the configuration");
  const fs::path out = o.common.out;
  auto tc = cfg.train;
  if (tc.checkpoint_interval > 0) tc.checkpoint_dir = out / "checkpoints";
  const auto log =
      train::cotrain(train::human_frames(human, cfg.model), train::robot_frames(robot, cfg.model), params, tc);
  write_text(out / "train_log.csv", log.to_csv());
  save_model(out / "model.ckpt", params, cfg, use_human ? "cotrain" : "finetune", cfg.train.cotrain_steps);
  const auto& last = log.records.back();
  return std::string(use_human ? "cotrain" : "finetune") + ": " + std::to_string(cfg.train.cotrain_steps) +
         " steps, final l2d " + fmt3(last.l2d) + " lpolicy " + fmt3(last.lpolicy);
}

std::string cmd_eval(const Options& o) {
  const auto ckpt = require_file(o.checkpoint, "--checkpoint");
  nn::CheckpointMeta meta;
  const auto params = nn::load_checkpoint(ckpt, &meta);
  auto cfg = ExperimentConfig::desk_defaults();
  cfg.apply(config_keys(meta.extra));
  resolve(cfg, o);
  const std::uint64_t seed = o.seed.value_or(0);
  auto scene = simenv::SceneConfig::defaults(cfg.task);
  scene.world = cfg.robotize.world;
  const auto r = train::evaluate(params, scene, cfg.ood_rollouts, seed, cfg.ood_styles, cfg.rollout);
  std::string csv = simenv::rollout_csv_header();
  for (const auto& rep : r.reports) csv += simenv::rollout_csv_row(ckpt.filename().string(), rep);
  const fs::path out = o.common.out;
  write_text(out / "rollouts.csv", csv);
  write_text(out / "eval.txt", "mean = " + std::to_string(r.mean) + "\nsem = " + std::to_string(r.sem) + "\n");
  return "eval: score " + fmt3(r.mean) + " +- " + fmt3(r.sem) + " over " + std::to_string(r.reports.size()) +
         " rollouts";
}

std::string cmd_ablate(const Options& o) {
  auto cfg = ExperimentConfig::desk_defaults();
  resolve(cfg, o);
  experiments::Study study(cfg, experiments::build_corpus(cfg), stderr_progress());
  std::vector<experiments::ConditionResult> grid, id_ood;
  for (const auto& c : experiments::ablation_grid()) grid.push_back(study.result(c));
  id_ood = grid;
  id_ood.push_back(study.result({true, true, 0.0}));
  const fs::path out = o.common.out;
  write_text(out / "ablation.csv", experiments::ablation_csv(grid));
  write_text(out / "id_ood.csv", experiments::id_ood_csv(id_ood));
  std::string s = "ablate:";
  for (const auto& r : grid) s += " " + r.condition.name() + "=" + fmt3(r.ood_mean());
  return s;
}

std::string cmd_scale_study(const Options& o) {
  auto cfg = ExperimentConfig::desk_defaults();
  resolve(cfg, o);
  experiments::Study study(cfg, experiments::build_corpus(cfg), stderr_progress());
  std::vector<experiments::ConditionResult> rows;
  for (const auto& c : experiments::scaling_conditions(cfg.fractions)) rows.push_back(study.result(c));
  write_text(fs::path(o.common.out) / "scaling.csv", experiments::scaling_csv(rows));
  std::string s = "scale-study:";
  for (const auto& r : rows) s += " " + fmt3(r.condition.fraction) + "=" + fmt3(r.ood_mean());
  return s;
}

std::string cmd_plot(const Options& o) {
  const auto csv = require_file(o.csv, "--csv");
  const auto bars = experiments::bars_from_csv(io::read_text(csv), o.value_col, o.sem_col);
  if (bars.empty()) throw ValidationError("csv has no rows: " + csv.string());
  const auto path = fs::path(o.common.out) / (csv.stem().string() + ".svg");
  write_text(path, experiments::bar_chart_svg(bars, o.title));
  return "plot: " + std::to_string(bars.size()) + " bars to " + path.string();
}

bool is_data_error(const Error& e) {
  return dynamic_cast<const ChecksumMismatch*>(&e) || dynamic_cast<const VersionMismatch*>(&e) ||
         dynamic_cast<const TruncatedFile*>(&e) || dynamic_cast<const FormatError*>(&e);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robotized human video pipeline and co-training experiments"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate raw human clips and robot demonstrations");
  add_common(gen, o.common);
  gen->add_option("--task", o.task, "Task");
  gen->add_option("--seed", o.seed, "Data seed");
  gen->add_option("--human-clips", o.human_clips, "Number of human clips")->check(CLI::NonNegativeNumber);
  gen->add_option("--robot-demos", o.robot_demos, "Number of robot demonstrations")->check(CLI::PositiveNumber);

  auto* rob = app.add_subcommand("robotize", "Retarget, label, filter and overlay human clips");
  auto* lab = app.add_subcommand("label", "Retarget and write horizon labels only");
  auto* fil = app.add_subcommand("filter", "Retarget and write keep flags only");
  for (auto* cmd : {rob, lab, fil}) {
    add_common(cmd, o.common);
    cmd->add_option("--in", o.in, "Input dataset manifest");
    cmd->add_option("--homography", o.homography, "plane or estimated")
        ->check(CLI::IsMember({"plane", "estimated"}));
  }
  auto* ov = rob->add_flag("--overlay", o.overlay, "Render the robot over the arms (default)");
  rob->add_flag("--no-overlay", o.no_overlay, "Keep the hand appearance")->excludes(ov);

  auto* pre = app.add_subcommand("pretrain", "Fit the encoder and keypoint head on human clips");
  add_common(pre, o.common);
  pre->add_option("--human", o.human, "Robotized human dataset manifest");
  add_training_flags(pre, o);

  auto* co = app.add_subcommand("cotrain", "Co-train on human and robot data, or finetune on robot data");
  add_common(co, o.common);
  co->add_option("--human", o.human, "Robotized human dataset manifest");
  co->add_option("--robot", o.robot, "Robot demonstration manifest");
  co->add_option("--lambda", o.lambda, "Policy loss weight");
  co->add_option("--warmup", o.warmup, "Warmup steps");
  co->add_option("--batch-robot", o.batch_robot, "Robot frames per update");
  auto* ct = co->add_flag("--cotrain", o.cotrain, "Use the human data (default)");
  co->add_flag("--finetune", o.finetune, "Robot data only")->excludes(ct);
  co->add_flag("--alternating", o.alternating, "One loss per update instead of the sum");
  add_training_flags(co, o);

  auto* ev = app.add_subcommand("eval", "Roll out a checkpoint in the simulated scenes");
  add_common(ev, o.common);
  ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  ev->add_option("--task", o.task, "Task (default: the one the checkpoint was trained for)");
  ev->add_option("--styles", o.styles, "Scene styles (0 is the training scene)");
  ev->add_option("--rollouts", o.rollouts, "Number of rollouts")->check(CLI::PositiveNumber);
  ev->add_option("--seed", o.seed, "Rollout seed");

  auto* abl = app.add_subcommand("ablate", "Overlay x co-training grid");
  add_common(abl, o.common);
  add_study_flags(abl, o);

  auto* sca = app.add_subcommand("scale-study", "Co-training with growing shares of human data");
  add_common(sca, o.common);
  add_study_flags(sca, o);
  sca->add_option("--fractions", o.fractions, "Shares of the human clips");

  auto* plt = app.add_subcommand("plot", "Render a result CSV as an SVG bar chart");
  add_common(plt, o.common);
  plt->add_option("--csv", o.csv, "Input CSV");
  plt->add_option("--title", o.title, "Chart title");
  plt->add_option("--value-col", o.value_col, "Column with bar heights");
  plt->add_option("--sem-col", o.sem_col, "Column with error bar half widths");

  for (auto* cmd : app.get_subcommands({})) {
    cmd->option_defaults()->always_capture_default();
    for (auto* opt : cmd->get_options()) opt->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    if (!o.common.config.empty()) apply_config_file(*cmd, o.common.config);
    if (o.common.out.empty()) throw ValidationError("--out is required");
    std::string summary;
    if (name == "gen-data") summary = cmd_gen_data(o);
    else if (name == "robotize") summary = cmd_robotize(o, Stage::Full);
    else if (name == "label") summary = cmd_robotize(o, Stage::Label);
    else if (name == "filter") summary = cmd_robotize(o, Stage::Filter);
    else if (name == "pretrain") summary = cmd_pretrain(o);
    else if (name == "cotrain") summary = cmd_cotrain(o);
    else if (name == "eval") summary = cmd_eval(o);
    else if (name == "ablate") summary = cmd_ablate(o);
    else if (name == "scale-study") summary = cmd_scale_study(o);
    else if (name == "plot") summary = cmd_plot(o);
    write_text(fs::path(o.common.out) / (name + "_config.txt"), config_manifest(*cmd));
    std::cout << summary << std::endl;
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kValidation;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return is_data_error(e) ? kDataError : kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kValidation;
  }
}
