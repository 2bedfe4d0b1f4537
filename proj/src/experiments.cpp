#include "masq/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <tuple>

#include "masq/error.hpp"

namespace masq::experiments {

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string round_trip(double v) {
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
    throw InvalidArgument("bad value for " + key + ": " + it->second);
  }
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    if constexpr (std::is_floating_point_v<T>) {
      os << round_trip(v[i]);
    } else {
      os << v[i];
    }
  }
  return os.str();
}

template <typename T>
std::vector<T> split(const std::string& key, const std::string& s) {
  std::istringstream is(s);
  std::vector<T> out;
  T v;
  while (is >> v) out.push_back(v);
  if (!is.eof()) throw InvalidArgument("bad list for " + key + ": " + s);
  return out;
}

std::map<std::string, std::string> with_prefix(const std::map<std::string, std::string>& m,
                                               const std::string& prefix) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : m)
    if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
  return out;
}

std::vector<double> pooled(const std::vector<SeedScores>& seeds, bool ood) {
  std::vector<double> v;
  for (const auto& s : seeds)
    for (const auto& r : (ood ? s.ood : s.id).reports) v.push_back(r.score);
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::desk_defaults() {
  ExperimentConfig c;
  c.train.lr = 3e-3;
  c.robotize.world.lighting_gain = 0.15;
  return c;
}

void ExperimentConfig::validate() const {
  if (human_clips < 0) throw InvalidArgument("human_clips must be >= 0");
  if (robot_demos < 1) throw InvalidArgument("need at least one robot demonstration");
  if (seeds.empty()) throw InvalidArgument("need at least one seed");
  if (ood_rollouts < 1 || id_rollouts < 1) throw InvalidArgument("rollout counts must be positive");
  if (ood_styles.empty()) throw InvalidArgument("need at least one out-of-distribution style");
  for (int s : ood_styles)
    if (s <= 0) throw InvalidArgument("out-of-distribution styles must differ from the robot scene (0)");
  if (first_human_style < 0) throw InvalidArgument("first_human_style must be >= 0");
  for (double f : fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw InvalidArgument("fractions must lie in [0, 1]");
  robotize.validate();
  train.validate();
  if (model.feature_dim != robotize.world.feature_dim() || model.embed_dim != robotize.world.embed_dim) {
    throw DimensionMismatch("model input sizes do not match the world configuration");
  }
  if (model.chunk_len != rollout.chunk_len) throw DimensionMismatch("model and rollout chunk lengths differ");
  if (model.horizon != robotize.labels.horizon) throw DimensionMismatch("model and label horizons differ");
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  std::map<std::string, std::string> m{
      {"task", simenv::task_name(task)},
      {"human_clips", std::to_string(human_clips)},
      {"robot_demos", std::to_string(robot_demos)},
      {"data_seed", std::to_string(data_seed)},
      {"first_human_style", std::to_string(first_human_style)},
      {"seeds", join(seeds)},
      {"ood_rollouts", std::to_string(ood_rollouts)},
      {"id_rollouts", std::to_string(id_rollouts)},
      {"ood_styles", join(ood_styles)},
      {"fractions", join(fractions)},
      {"human.length", std::to_string(human.length)},
      {"human.occlusion_prob", round_trip(human.occlusion_prob)},
      {"human.absent_prob", round_trip(human.absent_prob)},
      {"human.late_start_prob", round_trip(human.late_start_prob)},
      {"rollout.execute", std::to_string(rollout.execute)},
      {"rollout.max_steps", std::to_string(rollout.max_steps)},
  };
  for (const auto& [k, v] : robotize.to_map()) m["robotize." + k] = v;
  for (const auto& [k, v] : model.to_map()) m["model." + k] = v;
  for (const auto& [k, v] : train.to_map()) m["train." + k] = v;
  return m;
}

void ExperimentConfig::apply(const std::map<std::string, std::string>& m) {
  if (auto it = m.find("task"); it != m.end()) task = simenv::parse_task(it->second);
  human_clips = static_cast<int>(num(m, "human_clips", human_clips));
  robot_demos = static_cast<int>(num(m, "robot_demos", robot_demos));
  data_seed = static_cast<std::uint64_t>(num(m, "data_seed", static_cast<double>(data_seed)));
  first_human_style = static_cast<int>(num(m, "first_human_style", first_human_style));
  if (auto it = m.find("seeds"); it != m.end()) seeds = split<std::uint64_t>("seeds", it->second);
  ood_rollouts = static_cast<int>(num(m, "ood_rollouts", ood_rollouts));
  id_rollouts = static_cast<int>(num(m, "id_rollouts", id_rollouts));
  if (auto it = m.find("ood_styles"); it != m.end()) ood_styles = split<int>("ood_styles", it->second);
  if (auto it = m.find("fractions"); it != m.end()) fractions = split<double>("fractions", it->second);
  human.length = static_cast<int>(num(m, "human.length", human.length));
  human.occlusion_prob = num(m, "human.occlusion_prob", human.occlusion_prob);
  human.absent_prob = num(m, "human.absent_prob", human.absent_prob);
  human.late_start_prob = num(m, "human.late_start_prob", human.late_start_prob);
  rollout.execute = static_cast<int>(num(m, "rollout.execute", rollout.execute));
  rollout.max_steps = static_cast<int>(num(m, "rollout.max_steps", rollout.max_steps));
  robotize.apply(with_prefix(m, "robotize."));
  train.apply(with_prefix(m, "train."));
  if (auto mm = with_prefix(m, "model."); !mm.empty()) {
    auto merged = model.to_map();
    for (const auto& [k, v] : mm) merged[k] = v;
    model = nn::ModelConfig::from_map(merged);
  }
  // Sizes that are fixed by the world and the labels follow them.
  model.feature_dim = robotize.world.feature_dim();
  model.embed_dim = robotize.world.embed_dim;
  model.horizon = robotize.labels.horizon;
  rollout.chunk_len = model.chunk_len;
}

// ---------------------------------------------------------------------------

Corpus build_corpus(const ExperimentConfig& cfg) {
  cfg.validate();
  Corpus c;
  for (int i = 0; i < cfg.human_clips; ++i) {
    auto scene = simenv::SceneConfig::defaults(cfg.task, cfg.first_human_style + i);
    scene.world = cfg.robotize.world;
    scene.embodiment = simenv::Embodiment::HandAppearance;
    c.raw.push_back(simenv::gen_human_clip(scene, derive_seed(cfg.data_seed, static_cast<std::uint64_t>(i)), cfg.human));
  }
  auto with_overlay = cfg.robotize;
  with_overlay.overlay = true;
  auto without = cfg.robotize;
  without.overlay = false;
  for (const auto& raw : c.raw) {
    auto a = raw, b = raw;
    robotize::robotize_clip(a, with_overlay);
    robotize::robotize_clip(b, without);
    c.overlay.push_back(std::move(a));
    c.plain.push_back(std::move(b));
  }
  auto base = simenv::SceneConfig::defaults(cfg.task);
  base.world = cfg.robotize.world;
  simenv::RobotDemoConfig demo;
  demo.chunk_len = cfg.model.chunk_len;
  c.robot = simenv::gen_robot_demos(cfg.task, cfg.robot_demos, derive_seed(cfg.data_seed, 0x726f626f74), base, demo);
  return c;
}

nn::ModelParams initial_params(const nn::ModelConfig& model, std::uint64_t seed) {
  nn::ModelParams p(model);
  Rng init(derive_seed(seed, 0x696e6974));
  p.init(init);
  return p;
}

std::string Condition::name() const {
  if (fraction <= 0.0) return "robot-only";
  std::string s = overlay ? "overlay" : "no-overlay";
  s += cotrain ? "+cotrain" : "+finetune";
  if (fraction < 1.0) s += "@" + fixed(fraction, 2);
  return s;
}

bool Condition::operator<(const Condition& o) const {
  return std::tie(overlay, cotrain, fraction) < std::tie(o.overlay, o.cotrain, o.fraction);
}

double ConditionResult::ood_mean() const { return train::mean_of(pooled(seeds, true)); }
double ConditionResult::ood_sem() const { return train::sem_of(pooled(seeds, true)); }
double ConditionResult::id_mean() const { return train::mean_of(pooled(seeds, false)); }
double ConditionResult::id_sem() const { return train::sem_of(pooled(seeds, false)); }

Study::Study(ExperimentConfig cfg, Corpus corpus, Progress progress)
    : cfg_(std::move(cfg)), corpus_(std::move(corpus)), progress_(std::move(progress)) {
  cfg_.validate();
  if (corpus_.robot.empty()) throw EmptyRobotDataset("study needs robot demonstrations");
}

void Study::log(const std::string& msg) const {
  if (progress_) progress_(msg);
}

std::vector<std::size_t> Study::human_subset(double fraction) const {
  return dataset::subsample_indices(corpus_.overlay.size(), fraction, cfg_.data_seed);
}

const nn::ModelParams& Study::pretrained(bool overlay, double fraction, std::uint64_t seed) {
  const auto key = std::make_tuple(overlay, fraction, seed);
  if (auto it = pretrained_.find(key); it != pretrained_.end()) return it->second;
  const auto& source = overlay ? corpus_.overlay : corpus_.plain;
  std::vector<dataset::ClipBundle> picked;
  for (auto i : human_subset(fraction)) picked.push_back(source[i]);
  auto p = initial_params(cfg_.model, seed);
  auto tc = cfg_.train;
  tc.seed = seed;
  log("pretrain " + std::string(overlay ? "overlay" : "no-overlay") + " fraction " + fixed(fraction, 2) +
      " seed " + std::to_string(seed));
  train::pretrain(train::human_frames(picked, cfg_.model), p, tc);
  return pretrained_.emplace(key, std::move(p)).first->second;
}

const SeedScores& Study::run(const Condition& c, std::uint64_t seed) {
  Condition key = c;
  if (key.fraction <= 0.0) key = {true, true, 0.0};  // every arm without human data is the same run
  if (auto it = runs_.find({key, seed}); it != runs_.end()) return it->second.second;

  auto tc = cfg_.train;
  tc.seed = seed;
  const auto robot = train::robot_frames(corpus_.robot, cfg_.model);
  nn::ModelParams p(cfg_.model);
  train::HumanFrames human;
  if (key.fraction <= 0.0) {
    p = initial_params(cfg_.model, seed);
  } else {
    p = pretrained(key.overlay, key.fraction, seed);
    if (key.cotrain) {
      const auto& source = key.overlay ? corpus_.overlay : corpus_.plain;
      std::vector<dataset::ClipBundle> picked;
      for (auto i : human_subset(key.fraction)) picked.push_back(source[i]);
      human = train::human_frames(picked, cfg_.model);
    }
  }
  log("train " + key.name() + " seed " + std::to_string(seed));
  train::cotrain(human, robot, p, tc);

  auto scene = simenv::SceneConfig::defaults(cfg_.task);
  scene.world = cfg_.robotize.world;
  SeedScores s;
  s.seed = seed;
  // Evaluation seeds depend only on the training seed, so arms are compared
  // on the same initial states.
  s.ood = train::evaluate(p, scene, cfg_.ood_rollouts, derive_seed(seed, 0x6f6f64), cfg_.ood_styles, cfg_.rollout);
  const std::vector<int> id_style{0};
  s.id = train::evaluate(p, scene, cfg_.id_rollouts, derive_seed(seed, 0x6964), id_style, cfg_.rollout);
  log("  " + key.name() + " seed " + std::to_string(seed) + ": ood " + fixed(s.ood.mean, 3) + " id " +
      fixed(s.id.mean, 3));
  return runs_.emplace(std::make_pair(key, seed), std::make_pair(std::move(p), std::move(s))).first->second.second;
}

const nn::ModelParams& Study::params(const Condition& c, std::uint64_t seed) {
  run(c, seed);
  Condition key = c;
  if (key.fraction <= 0.0) key = {true, true, 0.0};
  return runs_.at({key, seed}).first;
}

ConditionResult Study::result(const Condition& c) {
  ConditionResult r;
  r.condition = c;
  for (auto seed : cfg_.seeds) r.seeds.push_back(run(c, seed));
  return r;
}

std::vector<Condition> ablation_grid() {
  return {{true, true, 1.0}, {false, true, 1.0}, {true, false, 1.0}, {false, false, 1.0}};
}

std::vector<Condition> scaling_conditions(const std::vector<double>& fractions) {
  std::vector<Condition> out;
  for (double f : fractions) out.push_back({true, true, f});
  return out;
}

namespace {

std::string per_seed_csv(const std::vector<ConditionResult>& results, const std::string& first,
                         const std::function<std::string(const Condition&)>& label) {
  std::ostringstream os;
  os << first;
  if (!results.empty())
    for (const auto& s : results.front().seeds) os << ",seed_" << s.seed;
  os << ",mean,sem\n";
  for (const auto& r : results) {
    os << label(r.condition);
    for (const auto& s : r.seeds) os << ',' << fixed(s.ood.mean);
    os << ',' << fixed(r.ood_mean()) << ',' << fixed(r.ood_sem()) << '\n';
  }
  return os.str();
}

}  // namespace

std::string ablation_csv(const std::vector<ConditionResult>& results) {
  return per_seed_csv(results, "condition", [](const Condition& c) { return c.name(); });
}

std::string scaling_csv(const std::vector<ConditionResult>& results) {
  return per_seed_csv(results, "fraction", [](const Condition& c) { return fixed(c.fraction, 2); });
}

std::string id_ood_csv(const std::vector<ConditionResult>& results) {
  std::ostringstream os;
  os << "condition,id_mean,id_sem,ood_mean,ood_sem,drop\n";
  for (const auto& r : results) {
    os << r.condition.name() << ',' << fixed(r.id_mean()) << ',' << fixed(r.id_sem()) << ','
       << fixed(r.ood_mean()) << ',' << fixed(r.ood_sem()) << ',' << fixed(r.drop()) << '\n';
  }
  return os.str();
}

std::vector<Bar> bars_from_csv(const std::string& csv, const std::string& value_col,
                               const std::string& sem_col) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty csv");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("csv has no column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto vi = column(value_col);
  const auto si = column(sem_col);
  std::vector<Bar> bars;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw FormatError("csv row has the wrong number of cells: " + line);
    Bar b;
    b.label = cells[0];
    try {
      b.value = std::stod(cells[vi]);
      b.sem = std::stod(cells[si]);
    } catch (const std::exception&) {
      throw FormatError("csv cell is not a number: " + line);
    }
    bars.push_back(b);
  }
  return bars;
}

std::string bar_chart_svg(const std::vector<Bar>& bars, const std::string& title) {
  const double left = 60, top = 40, plot_h = 260, bar_w = 70, gap = 30;
  const double width = left + gap + static_cast<double>(bars.size()) * (bar_w + gap) + 20;
  const double height = top + plot_h + 70;
  auto y_of = [&](double v) { return top + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 0) << "\" height=\""
     << fixed(height, 0) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fixed(width / 2, 1) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << xml_escape(title) << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0, y = y_of(v);
    os << "<line x1=\"" << left << "\" y1=\"" << fixed(y, 1) << "\" x2=\"" << fixed(width - 20, 1) << "\" y2=\""
       << fixed(y, 1) << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << fixed(y + 4, 1) << "\" text-anchor=\"end\">" << fixed(v, 2)
       << "</text>\n";
  }
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double x = left + gap + static_cast<double>(i) * (bar_w + gap);
    const double y = y_of(b.value);
    os << "<rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(y, 1) << "\" width=\"" << bar_w << "\" height=\""
       << fixed(top + plot_h - y, 1) << "\" fill=\"#4a7ab5\"/>\n";
    const double cx = x + bar_w / 2;
    const double lo = y_of(b.value - b.sem), hi = y_of(b.value + b.sem);
    os << "<line x1=\"" << fixed(cx, 1) << "\" y1=\"" << fixed(lo, 1) << "\" x2=\"" << fixed(cx, 1) << "\" y2=\""
       << fixed(hi, 1) << "\" stroke=\"black\"/>\n";
    for (double yy : {lo, hi}) {
      os << "<line x1=\"" << fixed(cx - 8, 1) << "\" y1=\"" << fixed(yy, 1) << "\" x2=\"" << fixed(cx + 8, 1)
         << "\" y2=\"" << fixed(yy, 1) << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << fixed(cx, 1) << "\" y=\"" << fixed(top + plot_h + 18, 1)
       << "\" text-anchor=\"middle\">" << xml_escape(b.label) << "</text>\n";
    os << "<text x=\"" << fixed(cx, 1) << "\" y=\"" << fixed(hi - 6, 1) << "\" text-anchor=\"middle\">"
       << fixed(b.value, 2) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace masq::experiments
