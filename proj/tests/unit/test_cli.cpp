#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "cali/cli/cli.hpp"
#include "cali/errors.hpp"
#include "doctest.h"

using namespace cali;
using namespace cali::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "cali");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const char* kTiny = R"({"data": {"preset": "mild-shift", "n_source": 6, "n_target": 6, "n_eval": 3},
  "train": {"max_iters": 12, "interval": 3, "log_every": 6, "checkpoint_every": 12, "iou_window": 3,
            "eval_images": 3}})";

}  // namespace

TEST_CASE("run configuration parsing") {
  const RunConfig defaults;
  CHECK(parse_run_config(nlohmann::json::object()) == defaults);
  CHECK(parse_run_config(nlohmann::json::parse(to_json(defaults).dump())) == defaults);

  const auto mild = parse_run_config(nlohmann::json::parse(R"({"data": {"preset": "mild-shift"}})"));
  CHECK(mild.data.spec == synthdata::preset("mild-shift"));
  CHECK(parse_run_config(nlohmann::json::parse(to_json(mild).dump())) == mild);

  auto key_of = [](const char* text) -> std::string {
    try {
      parse_run_config(nlohmann::json::parse(text));
    } catch (const ConfigError& e) {
      return e.key_path();
    }
    return "(accepted)";
  };
  CHECK(key_of(R"({"extra": {}})") == "extra");
  CHECK(key_of(R"({"train": {"lr": 1}})") == "train.lr");
  CHECK(key_of(R"({"train": {"lr_da": "fast"}})") == "train.lr_da");
  CHECK(key_of(R"({"train": {"method": "best"}})") == "train.method");
  CHECK(key_of(R"({"train": {"ablation_wrong_order": 1}})") == "train.ablation_wrong_order");
  CHECK(key_of(R"({"train": {"max_iters": 0}})") == "train.max_iters");
  CHECK(key_of(R"({"data": {"n_eval": -3}})") == "data.n_eval");
  CHECK(key_of(R"({"data": {"shift": {"scale": 2}}})") == "data.shift.scale");
  CHECK(key_of(R"({"planner": {"camera": {"focal": 3}}})") == "planner.camera.focal");
  CHECK(key_of(R"({"planner": {"alpha": 3}})") == "planner.alpha");
  CHECK(key_of(R"({"sim": {"dt": 0}})") == "sim.dt");
  CHECK(key_of(R"({"arch": {"num_classes": 5}})") == "arch.num_classes");
  CHECK(key_of(R"({"sim": {"seed": 4}})") == "sim.seed");
}

TEST_CASE("documented keys cover the whole document") {
  const auto keys = documented_keys();
  std::set<std::string> names;
  for (const auto& [k, v] : keys) {
    names.insert(k);
    CHECK_FALSE(v.empty());
  }
  for (const char* k : {"data.preset", "data.n_source", "data.shift.offset", "arch.leaky_slope", "train.lr_d",
                        "train.ablation_wrong_order", "planner.literal_clearance", "planner.camera.pitch",
                        "sim.max_steps"})
    CHECK(names.contains(k));

  const auto help = run({"--help"});
  CHECK(help.code == 0);
  for (const auto& [k, v] : keys) CHECK(help.out.find(k + " = " + v) != std::string::npos);
}

TEST_CASE("seed expansion") {
  const auto a = expand_seed(0), b = expand_seed(1);
  const std::set<std::uint64_t> all{a.data, a.eval, a.train, a.sim, b.data, b.eval, b.train, b.sim};
  CHECK(all.size() == 8);
  CHECK(expand_seed(0).data == a.data);

  DataConfig d;
  d.n_source = 2;
  d.n_target = 3;
  d.n_eval = 4;
  const auto x = make_experiment_data(d, 5);
  CHECK(x.source.size() == 2);
  CHECK(x.target.size() == 3);
  CHECK(x.eval.size() == 4);
  CHECK(make_experiment_data(d, 5).eval == x.eval);
  CHECK_FALSE(x.eval.samples[0] == x.target.samples[0]);
}

TEST_CASE("exit codes") {
  TempDir tmp("cali_test_cli_codes");
  spit(tmp.path / "bad.json", R"({"train": {"nope": 1}})");
  spit(tmp.path / "broken.json", "{ not json");
  spit(tmp.path / "nan.json", R"({"data": {"preset": "mild-shift", "n_source": 4, "n_target": 4, "n_eval": 2},
    "train": {"max_iters": 10, "lr_da": 1e300, "lr_ca": 1e300, "iou_window": 3, "eval_images": 2}})");

  CHECK(run({}).code == 2);
  CHECK(run({"launch"}).code == 2);
  const auto bad = run({"train", "--config", (tmp.path / "bad.json").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("train.nope") != std::string::npos);
  CHECK(run({"train", "--config", (tmp.path / "broken.json").string()}).code == 2);
  CHECK(run({"train", "--config", (tmp.path / "absent.json").string()}).code == 4);
  CHECK(run({"eval", "--checkpoint", (tmp.path / "absent.ckpt").string()}).code == 4);
  CHECK(run({"divergence", "--preset", "shifted"}).code == 2);
  const auto nan = run({"train", "--config", (tmp.path / "nan.json").string(), "--out", (tmp.path / "n").string()});
  CHECK(nan.code == 3);
  CHECK(fs::exists(tmp.path / "n" / "nan_snapshot.ckpt"));

  fs::create_directories(tmp.path / "garbled");
  spit(tmp.path / "garbled" / "summary.json", "{\"method\": \"so\"");
  spit(tmp.path / "garbled" / "eval.csv", "iteration,miou\n1,0.5\n");
  CHECK(run({"report", "--runs", (tmp.path / "garbled").string(), "--out", (tmp.path / "r").string()}).code == 4);
}

TEST_CASE("divergence on identical sets") {
  TempDir tmp("cali_test_cli_div");
  const auto r = run({"divergence", "--preset", "identical", "--out", tmp.path.string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(tmp.path / "divergence.json"));
  CHECK(j["estimate"].get<double>() < 0.1);
  CHECK(j["holds"] == true);
}

TEST_CASE("train, eval and report agree") {
  TempDir tmp("cali_test_cli_train");
  const auto cfg = tmp.path / "tiny.json";
  spit(cfg, kTiny);
  std::vector<std::string> dirs;
  for (const char* method : {"so", "cali"})
    for (const char* seed : {"0", "1"}) {
      const auto dir = (tmp.path / (std::string(method) + seed)).string();
      const auto r = run({"train", "--config", cfg.string(), "--method", method, "--seed", seed, "--out", dir});
      REQUIRE(r.code == 0);
      dirs.push_back(dir);
    }
  // re-running is byte-identical
  const auto again = (tmp.path / "again").string();
  REQUIRE(run({"train", "--config", cfg.string(), "--method", "cali", "--seed", "1", "--out", again}).code == 0);
  for (const char* f : {"metrics.csv", "eval.csv", "summary.json", "final.ckpt"})
    CHECK(slurp(fs::path(again) / f) == slurp(tmp.path / "cali1" / f));

  // eval of the final checkpoint reproduces the training-time score
  const auto ev = (tmp.path / "ev").string();
  REQUIRE(run({"eval", "--config", cfg.string(), "--seed", "1", "--checkpoint",
               (tmp.path / "cali1" / "final.ckpt").string(), "--out", ev})
              .code == 0);
  CHECK(slurp(fs::path(ev) / "eval.csv") == slurp(tmp.path / "cali1" / "eval.csv"));

  std::vector<std::string> args{"report", "--out", (tmp.path / "rep").string(), "--runs"};
  args.insert(args.end(), dirs.begin(), dirs.end());
  REQUIRE(run(args).code == 0);
  const auto rows = nlohmann::json::parse(slurp(tmp.path / "rep" / "report.json"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["method"] == "so");
  CHECK(rows[1]["method"] == "cali");
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string m = rows[i]["method"];
    double sum = 0.0;
    for (const char* seed : {"0", "1"})
      sum += nlohmann::json::parse(slurp(tmp.path / (m + seed) / "eval.json"))["miou"].get<double>();
    CHECK(rows[i]["miou_mean"].get<double>() == doctest::Approx(sum / 2).epsilon(1e-8));
    CHECK(rows[i]["runs"] == 2);
  }
}

TEST_CASE("gen-data feeds train") {
  TempDir tmp("cali_test_cli_gen");
  const auto cfg = tmp.path / "tiny.json";
  spit(cfg, kTiny);
  const auto data = (tmp.path / "data").string();
  REQUIRE(run({"gen-data", "--config", cfg.string(), "--seed", "2", "--out", data}).code == 0);
  CHECK(synthdata::read_dataset(fs::path(data) / "eval").size() == 3);
  const auto a = (tmp.path / "a").string(), b = (tmp.path / "b").string();
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "2", "--out", a}).code == 0);
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "2", "--data", data, "--out", b}).code == 0);
  CHECK(slurp(fs::path(a) / "metrics.csv") == slurp(fs::path(b) / "metrics.csv"));
}

TEST_CASE("plan and navigate outputs") {
  TempDir tmp("cali_test_cli_nav");
  const auto p = (tmp.path / "p").string();
  REQUIRE(run({"plan", "--scenario", "empty", "--out", p}).code == 0);
  const auto trace = nlohmann::json::parse(slurp(fs::path(p) / "trace.json"));
  CHECK(trace["selected"] == 5);
  CHECK(fs::exists(fs::path(p) / "field.pgm"));
  CHECK(fs::exists(fs::path(p) / "mask.pgm"));

  const auto n = (tmp.path / "n").string();
  REQUIRE(run({"navigate", "--scenario", "box", "--dump", "--out", n}).code == 0);
  const auto summary = nlohmann::json::parse(slurp(fs::path(n) / "summary.json"));
  CHECK(summary["timeout"] == 1);
  CHECK(summary["collided"] == 0);
  CHECK(fs::exists(fs::path(n) / "episode_00.json"));
  CHECK(fs::exists(fs::path(n) / "frames_00" / "field_0000.pgm"));
  CHECK(run({"navigate", "--scenario", "maze", "--out", n}).code == 2);
}
