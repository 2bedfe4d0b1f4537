#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "doctest.h"
#include "masq/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "masq_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(MASQ_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read(const fs::path& p) { return masq::io::read_text(p); }

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string l;
  while (std::getline(is, l))
    if (!l.empty()) out.push_back(l);
  return out;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

const std::string kTiny =
    " --set train.pretrain_steps=30 --set train.cotrain_steps=30 --set train.warmup=5"
    " --human-clips 6 --robot-demos 3 --rollouts 3 --id-rollouts 3 --n-seeds 2";

// One small generated dataset shared by the tests below.
const fs::path& data_dir() {
  static const fs::path dir = [] {
    fs::remove_all(kRoot);
    const auto d = kRoot / "data";
    REQUIRE(run("gen-data --human-clips 4 --robot-demos 3 --seed 3 --out " + d.string()) == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("eval with a missing checkpoint exits 1 and writes nothing") {
  const auto out = kRoot / "eval_missing";
  fs::remove_all(out);
  CHECK(run("eval --checkpoint " + (kRoot / "nope.ckpt").string() + " --out " + out.string()) == 1);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("unknown flags and missing --out are validation errors") {
  CHECK(run("gen-data --out " + (kRoot / "x").string() + " --bogus 3") == 1);
  CHECK(run("gen-data --human-clips 2") == 1);
  CHECK(run("plot --csv") == 1);
  CHECK(run("gen-data --set no.such.key=1 --out " + (kRoot / "y").string()) == 1);
  CHECK(run("--help") == 0);
}

TEST_CASE("data errors exit 2") {
  const auto& d = data_dir();
  const auto bad = kRoot / "bad";
  fs::remove_all(bad);
  fs::copy(d, bad, fs::copy_options::recursive);

  SUBCASE("checksum") {
    fs::path clip;
    for (const auto& e : fs::directory_iterator(bad / "human" / "clips")) clip = e.path();
    auto bytes = masq::io::read_file(clip);
    bytes[bytes.size() / 2] ^= 0x5a;
    masq::io::write_file_atomic(clip, bytes);
    CHECK(run("robotize --in " + (bad / "human" / "manifest.txt").string() + " --out " + (kRoot / "o1").string()) == 2);
    CHECK_FALSE(fs::exists(kRoot / "o1"));
  }
  SUBCASE("version") {
    const auto m = bad / "human" / "manifest.txt";
    auto text = read(m);
    const auto p = text.find("format_version = ");
    REQUIRE(p != std::string::npos);
    text.replace(p, text.find('\n', p) - p, "format_version = 99");
    masq::io::write_text_atomic(m, text);
    CHECK(run("robotize --in " + m.string() + " --out " + (kRoot / "o2").string()) == 2);
  }
}

TEST_CASE("pipeline commands leave their inputs untouched and write a config manifest") {
  const auto& d = data_dir();
  const auto manifest = d / "human" / "manifest.txt";
  const auto before = read(manifest);
  const auto r = kRoot / "robotized";
  REQUIRE(run("robotize --in " + manifest.string() + " --out " + r.string()) == 0);
  CHECK(read(manifest) == before);
  CHECK(fs::exists(r / "manifest.txt"));
  CHECK(fs::exists(r / "filter_report.txt"));
  CHECK(read(r / "robotize_config.txt").find("in = ") != std::string::npos);

  const auto p = kRoot / "pre";
  REQUIRE(run("pretrain --human " + (r / "manifest.txt").string() + " --steps 10 --out " + p.string()) == 0);
  CHECK(lines(read(p / "train_log.csv")).size() == 11);

  const auto c = kRoot / "co";
  REQUIRE(run("cotrain --human " + (r / "manifest.txt").string() + " --robot " +
              (d / "robot" / "manifest.txt").string() + " --init " + (p / "model.ckpt").string() +
              " --steps 10 --warmup 2 --out " + c.string()) == 0);
  const auto e = kRoot / "eval";
  REQUIRE(run("eval --checkpoint " + (c / "model.ckpt").string() + " --rollouts 3 --out " + e.string()) == 0);
  CHECK(lines(read(e / "rollouts.csv")).size() == 4);
}

TEST_CASE("a run is reproduced from its config manifest, and config entries override flags") {
  const auto& d = data_dir();
  const auto robot = (d / "robot" / "manifest.txt").string();
  const auto a = kRoot / "ft_a";
  const auto cfg = kRoot / "override.txt";
  masq::io::write_text_atomic(cfg, "steps = 6\nset = train.warmup=2\n");
  REQUIRE(run("cotrain --finetune --robot " + robot + " --steps 40 --config " + cfg.string() + " --out " + a.string()) == 0);
  CHECK(lines(read(a / "train_log.csv")).size() == 7);

  const auto b = kRoot / "ft_b";
  REQUIRE(run("cotrain --config " + (a / "cotrain_config.txt").string() + " --out " + b.string()) == 0);
  CHECK(masq::io::read_file(a / "model.ckpt") == masq::io::read_file(b / "model.ckpt"));
}

TEST_CASE("scale-study is byte-identical across runs with the same seed") {
  const auto a = kRoot / "scale_a", b = kRoot / "scale_b";
  REQUIRE(run("scale-study --seed 7" + kTiny + " --out " + a.string()) == 0);
  REQUIRE(run("scale-study --seed 7" + kTiny + " --out " + b.string()) == 0);
  const auto csv = read(a / "scaling.csv");
  CHECK(csv == read(b / "scaling.csv"));
  const auto rows = lines(csv);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "fraction,seed_7,seed_8,mean,sem");
}

TEST_CASE("ablate writes four conditions with one column per seed, and plot renders them") {
  const auto a = kRoot / "ablate";
  REQUIRE(run("ablate --seed 3" + kTiny + " --out " + a.string()) == 0);
  const auto rows = lines(read(a / "ablation.csv"));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "condition,seed_3,seed_4,mean,sem");
  for (const auto& r : rows) CHECK(count(r, ",") == 4);
  CHECK(lines(read(a / "id_ood.csv")).size() == 6);

  const auto p = kRoot / "plots";
  REQUIRE(run("plot --csv " + (a / "ablation.csv").string() + " --out " + p.string()) == 0);
  const auto svg = read(p / "ablation.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(count(svg, "fill=\"#4a7ab5\"") == 4);
  CHECK(count(svg, "stroke=\"black\"/>") == 1 + 4 * 3);  // axis plus a whisker and two caps per bar
  CHECK(run("plot --csv " + (a / "ablation.csv").string() + " --value-col nope --out " + p.string()) == 2);
}
