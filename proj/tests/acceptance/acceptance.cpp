// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset (e.g. `acceptance 7 8`).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cali/cli/cli.hpp"
#include "cali/divergence/divergence.hpp"
#include "cali/losses/losses.hpp"
#include "cali/models/models.hpp"
#include "cali/navsim/navsim.hpp"
#include "cali/numkit/grad_check.hpp"
#include "cali/numkit/ops.hpp"
#include "cali/numkit/rng.hpp"
#include "cali/planner/planner.hpp"
#include "cali/trainer/trainer.hpp"

#ifndef CALI_PRESET_DIR
#error "CALI_PRESET_DIR must point at the shipped presets"
#endif

using namespace cali;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// ---- shared benchmark runs -------------------------------------------------

struct BenchRun {
  trainer::RunResult result;
  double seconds = 0.0;
};

class Bench {
 public:
  const BenchRun& get(const std::string& preset, trainer::Method method, std::uint64_t seed,
                      bool wrong_order = false) {
    const auto key = std::make_tuple(preset, static_cast<int>(method), seed, wrong_order);
    if (auto it = runs_.find(key); it != runs_.end()) return it->second;

    cli::RunConfig cfg = cli::load_run_config(fs::path(CALI_PRESET_DIR) / (preset + ".json"));
    cfg.train.method = method;
    cfg.train.ablation_wrong_order = wrong_order;
    cfg.train.seed = cli::expand_seed(seed).train;
    const auto data = cli::make_experiment_data(cfg.data, seed);
    trainer::RunOptions opts;
    opts.arch = cfg.arch;
    opts.eval_set = &data.eval;

    const auto t0 = Clock::now();
    BenchRun run{trainer::run(cfg.train, data.source, data.target, opts), 0.0};
    run.seconds = seconds_since(t0);
    std::printf("    run %-5s %-6s seed %llu%s: target mIoU %.4f (%.1f s)\n", preset.c_str(),
                trainer::method_name(method).c_str(), static_cast<unsigned long long>(seed),
                wrong_order ? " wrong-order" : "", run.result.final_miou, run.seconds);
    std::fflush(stdout);
    return runs_.emplace(key, std::move(run)).first->second;
  }

  double mean_miou(const std::string& preset, trainer::Method method, double* seconds = nullptr) {
    double sum = 0.0;
    for (std::uint64_t s : seeds) {
      const auto& r = get(preset, method, s);
      sum += r.result.final_miou;
      if (seconds) *seconds += r.seconds;
    }
    return sum / static_cast<double>(std::size(seeds));
  }

  static constexpr std::uint64_t seeds[] = {0, 1, 2};

 private:
  std::map<std::tuple<std::string, int, std::uint64_t, bool>, BenchRun> runs_;
};

// ---- 1: gradient correctness -----------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checks = 0;
  const char* names[] = {"seg", "domain", "class-alignment", "weight-regularization", "mixed"};
  std::string worst_name;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    nk::Rng rng(nk::derive_seed(2024, seed));
    models::ArchitectureConfig arch;
    arch.num_classes = 2 + rng.below(3);
    arch.feature_channels = 3 + rng.below(4);
    arch.extractor_depth = 1 + rng.below(3);
    arch.discriminator_channels = {2 + rng.below(4), 1};
    const std::size_t h = 8 + 4 * rng.below(2), w = 8 + 4 * rng.below(2);
    models::ModelBundle m = models::build(arch, rng.next_u64());
    nk::Tensor xs({arch.in_channels, h, w}), xt({arch.in_channels, h, w}), y({arch.num_classes, h, w});
    for (double& v : xs.values()) v = rng.uniform(-1.5, 1.5);
    for (double& v : xt.values()) v = rng.uniform(-1.5, 1.5);
    for (std::size_t i = 0; i < h * w; ++i) y[rng.below(arch.num_classes) * h * w + i] = 1.0;
    const double slope = arch.leaky_slope;

    auto params_of = [&](std::initializer_list<models::Network*> nets) {
      std::vector<nk::Tensor*> out;
      for (auto* n : nets)
        for (auto* p : n->parameters()) out.push_back(p);
      return out;
    };
    const std::vector<std::pair<std::vector<nk::Tensor*>, nk::LossBuilder>> cases{
        {params_of({&m.extractor, &m.head1, &m.head2}),
         [&](nk::Graph& g) {
           nk::Var f = models::extract(g, m.extractor, g.constant(xs), true, slope);
           return losses::seg_loss(models::classify(g, m.head1, f, true), models::classify(g, m.head2, f, true), y);
         }},
        {params_of({&m.extractor, &m.discriminator}),
         [&](nk::Graph& g) {
           nk::Var fs = models::extract(g, m.extractor, g.constant(xs), true, slope);
           nk::Var ft = models::extract(g, m.extractor, g.constant(xt), true, slope);
           return losses::domain_loss(models::discriminate(g, m.discriminator, fs, true, slope),
                                      models::discriminate(g, m.discriminator, ft, true, slope));
         }},
        {params_of({&m.extractor, &m.head1, &m.head2}),
         [&](nk::Graph& g) {
           nk::Var f = models::extract(g, m.extractor, g.constant(xt), true, slope);
           return losses::class_alignment_loss(models::classify(g, m.head1, f, true),
                                               models::classify(g, m.head2, f, true));
         }},
        {params_of({&m.head1, &m.head2}),
         [&](nk::Graph& g) {
           return losses::weight_regularization(models::weight_vector(g, m.head1, true),
                                                models::weight_vector(g, m.head2, true));
         }},
        {params_of({&m.extractor, &m.head1}),
         [&](nk::Graph& g) {
           nk::Var f = models::extract(g, m.extractor, g.constant(xs), true, slope);
           return losses::mixed_loss(models::classify(g, m.head1, f, true), y);
         }},
    };
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const double err = nk::grad_check(cases[i].first, cases[i].second, {1e-6, 8, seed});
      ++checks;
      if (!(err <= worst)) {
        worst = err;
        worst_name = names[i];
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-4 && secs < 120.0;
  return {pass, std::to_string(checks) + " checks, max rel err " + fmt("%.2e", worst) + " (" + worst_name +
                    "), " + fmt("%.1f", secs) + " s (limits 1e-4, 120 s)"};
}

// ---- 2: divergence oracles -------------------------------------------------

Verdict divergence_oracles() {
  using namespace divergence;
  const auto t0 = Clock::now();
  nk::Rng rng(7);
  std::size_t holds = 0;
  for (int trial = 0; trial < 200; ++trial) {
    SampleSets sets;
    const std::size_t ns = 1 + rng.below(10), nt = 1 + rng.below(10);
    const double shift = rng.uniform(-2, 2);
    for (std::size_t i = 0; i < ns; ++i) sets.source.push_back({std::round(4 * rng.normal()) / 4});
    for (std::size_t i = 0; i < nt; ++i) sets.target.push_back({std::round(4 * (rng.normal() + shift)) / 4});
    const HypothesisClass h = threshold_class(sets);
    const HypothesisClass h_d = unite(h, symmetric_difference(h));
    const double d_hdh = brute_force_hdh_distance(sets, h);
    const double d_hd = brute_force_h_divergence(sets, h_d);
    holds += d_hdh <= d_hd + 1e-12;
  }

  SampleSets same, far;
  for (int i = 0; i < 200; ++i) same.source.push_back({rng.normal(), rng.normal()});
  same.target = same.source;
  for (int i = 0; i < 200; ++i) far.source.push_back({rng.normal() * 0.2, rng.normal() * 0.2});
  for (int i = 0; i < 200; ++i) far.target.push_back({6 + rng.normal() * 0.2, 6 + rng.normal() * 0.2});
  const double e_same = estimate_h_divergence(same, 500, 1);
  const double e_far = estimate_h_divergence(far, 500, 1);
  const double secs = seconds_since(t0);
  const bool pass = holds == 200 && e_same < 0.1 && e_far > 1.9 && secs < 60.0;
  return {pass, "bound held " + std::to_string(holds) + "/200, identical " + fmt("%.3f", e_same) + ", separated " +
                    fmt("%.3f", e_far) + ", " + fmt("%.1f", secs) + " s"};
}

// ---- 3-6: training benchmarks ----------------------------------------------

Verdict ordering(Bench& bench) {
  double secs = 0.0;
  const double so = bench.mean_miou("mild", trainer::Method::So, &secs);
  const double ca = bench.mean_miou("mild", trainer::Method::Ca, &secs);
  const double cali = bench.mean_miou("mild", trainer::Method::Cali, &secs);
  const double icali = bench.mean_miou("mild", trainer::Method::Icali, &secs);
  const bool pass = cali - so >= 0.03 && cali >= ca && icali - cali >= 0.01 && secs <= 1800.0;
  return {pass, "mild-shift mean mIoU so " + fmt("%.4f", so) + ", ca " + fmt("%.4f", ca) + ", cali " +
                    fmt("%.4f", cali) + ", icali " + fmt("%.4f", icali) + "; cali-so " + fmt("%+.4f", cali - so) +
                    ", icali-cali " + fmt("%+.4f", icali - cali) + "; " + fmt("%.0f", secs) + " s CPU"};
}

Verdict label_shift(Bench& bench) {
  const double gap_mild = bench.mean_miou("mild", trainer::Method::Icali) - bench.mean_miou("mild", trainer::Method::Cali);
  const double gap_hard = bench.mean_miou("hard", trainer::Method::Icali) - bench.mean_miou("hard", trainer::Method::Cali);
  return {gap_mild >= gap_hard,
          "icali-cali gap mild " + fmt("%+.4f", gap_mild) + ", hard " + fmt("%+.4f", gap_hard)};
}

double median_discrepancy(const std::vector<trainer::MetricsRow>& rows, std::int64_t lo, std::int64_t hi) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.iter >= lo && r.iter <= hi) v.push_back(r.target_discrepancy);
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Verdict discrepancy_trend(Bench& bench) {
  const auto& cali = bench.get("mild", trainer::Method::Cali, 0).result.metrics;
  const auto& ca = bench.get("mild", trainer::Method::Ca, 0).result.metrics;
  const double early = median_discrepancy(cali, 0, 500), late = median_discrepancy(cali, 2000, 5000);
  const double ca_early = median_discrepancy(ca, 0, 500), ca_late = median_discrepancy(ca, 2000, 5000);
  return {late < early, "cali median discrepancy 0-500 " + fmt("%.4f", early) + ", 2000-5000 " + fmt("%.4f", late) +
                            " (ca, logged only: " + fmt("%.4f", ca_early) + " -> " + fmt("%.4f", ca_late) + ")"};
}

Verdict collapse(Bench& bench) {
  const auto& wrong = bench.get("mild", trainer::Method::Cali, 0, true).result;
  const double so = bench.get("mild", trainer::Method::So, 0).result.final_miou;
  const bool confident = wrong.d_confident_at && *wrong.d_confident_at <= 1000;
  const bool below = wrong.final_miou < so;
  double peak = 0.0;
  for (const auto& r : wrong.metrics)
    if (r.d_accuracy) peak = std::max(peak, *r.d_accuracy);
  const std::string when = wrong.d_confident_at ? std::to_string(*wrong.d_confident_at) : std::string("never");
  return {confident && below, "wrong-order D accuracy > 0.95 at iteration " + when + " (peak logged " +
                                  fmt("%.3f", peak) + "); final mIoU " + fmt("%.4f", wrong.final_miou) +
                                  " vs so " + fmt("%.4f", so)};
}

// ---- 7: EDF exactness ------------------------------------------------------

Verdict edf_exactness() {
  const auto t0 = Clock::now();
  nk::Rng rng(31);
  double worst = 0.0;
  std::size_t empty = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    planner::Grid mask(32, 32);
    const double density = rng.uniform(0.05, 0.95);
    for (double& v : mask.values) v = rng.uniform() < density ? 1.0 : 0.0;
    const auto omega = planner::extract_boundary(mask, rng.below(16));
    const auto e = planner::edf(omega, 32, 32);
    if (omega.empty()) {
      ++empty;
      for (double v : e.field.values) worst = std::max(worst, std::fabs(v - std::sqrt(2.0 * 32 * 32)));
      continue;
    }
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        double best = 1e300;
        for (const auto& p : omega) {
          const double du = static_cast<double>(p.u) - static_cast<double>(c);
          const double dv = static_cast<double>(p.v) - static_cast<double>(r);
          best = std::min(best, std::sqrt(du * du + dv * dv));
        }
        worst = std::max(worst, std::fabs(e.field.at(r, c) - best));
      }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 30.0, "1000 masks (" + std::to_string(empty) + " with empty boundary), max error " +
                                            fmt("%.1e", worst) + ", " + fmt("%.1f", secs) + " s"};
}

// ---- 8: SE(3) distance -----------------------------------------------------

Verdict se3() {
  using planner::se3_distance;
  const double pi = std::numbers::pi;
  const double identity = se3_distance({1.0, -2.0, 0.4}, {1.0, -2.0, 0.4}, 1.0, 1.0);
  const double yaw = se3_distance({0, 0, 0}, {0, 0, pi / 2}, 1.0, 1.0);
  const double trans = se3_distance({0, 0, 0}, {3, 4, 0}, 1.0, 1.0);
  nk::Rng rng(8);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    auto pose = [&] { return planner::Pose{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-pi, pi)}; };
    const auto p = pose(), q = pose(), r = pose();
    const double a = rng.uniform(0.05, 3.0), b = rng.uniform(0.05, 3.0);
    if (se3_distance(p, r, a, b) > se3_distance(p, q, a, b) + se3_distance(q, r, a, b) + 1e-12) ++violations;
  }
  const bool pass = identity == 0.0 && std::fabs(yaw - pi / 2) <= 1e-12 && std::fabs(trans - 5.0) <= 1e-12 &&
                    violations == 0;
  return {pass, "identity " + fmt("%.3g", identity) + ", yaw " + fmt("%.15f", yaw) + ", translation " +
                    fmt("%.15f", trans) + ", triangle violations " + std::to_string(violations) + "/10000"};
}

// ---- 9: navigation suite ---------------------------------------------------

Verdict navigation() {
  const auto t0 = Clock::now();
  planner::PlannerConfig pc;
  const navsim::SimConfig sc;
  const auto suite = navsim::run_suite(pc, sc);
  const auto world = navsim::empty_world();
  const auto empty = navsim::run_episode(world, pc, sc);
  const double straight = std::hypot(world.goal.x - world.start.x, world.goal.y - world.start.y);
  const double ratio = empty.path_length / straight;
  pc.literal_clearance = true;
  const auto literal = navsim::run_suite(pc, sc);
  const double secs = seconds_since(t0);
  const bool pass = suite.reached >= 9 && suite.collided <= 1 && empty.outcome == navsim::Outcome::Reached &&
                    std::fabs(ratio - 1.0) <= 0.1 && secs < 300.0;
  return {pass, "suite reached " + std::to_string(suite.reached) + "/10, collided " + std::to_string(suite.collided) +
                    "; empty world " + navsim::outcome_name(empty.outcome) + ", path/straight " +
                    fmt("%.3f", ratio) + "; literal-clearance cost collided " + std::to_string(literal.collided) +
                    "/10; " + fmt("%.1f", secs) + " s"};
}

// ---- 10: CLI determinism ---------------------------------------------------

int cli(const std::vector<std::string>& args) {
  std::vector<std::string> full{"cali"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::map<std::string, std::string> text_outputs(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (!entry.is_regular_file() || (ext != ".csv" && ext != ".json")) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    files[fs::relative(entry.path(), dir).string()] = {std::istreambuf_iterator<char>(in),
                                                       std::istreambuf_iterator<char>()};
  }
  return files;
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "cali_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "config.json";
  std::ofstream(cfg) << R"({"data": {"preset": "mild-shift", "n_source": 12, "n_target": 12, "n_eval": 6},
    "train": {"max_iters": 60, "interval": 10, "log_every": 10, "checkpoint_every": 30, "iou_window": 5,
              "eval_images": 6},
    "sim": {"suite_size": 3, "max_steps": 80}})";
  const std::string c = cfg.string();

  std::vector<std::string> failed;
  std::size_t compared = 0;
  for (int pass = 0; pass < 2; ++pass) {
    const fs::path out = root / ("pass" + std::to_string(pass));
    auto dir = [&](const char* name) { return (out / name).string(); };
    const std::vector<std::vector<std::string>> commands{
        {"gen-data", "--config", c, "--seed", "3", "--out", dir("gen")},
        {"train", "--config", c, "--seed", "3", "--method", "icali", "--out", dir("train")},
        {"eval", "--config", c, "--seed", "3", "--checkpoint", dir("train") + "/final.ckpt", "--out", dir("eval")},
        {"divergence", "--config", c, "--seed", "3", "--preset", "mild-shift", "--out", dir("divergence")},
        {"plan", "--config", c, "--seed", "3", "--out", dir("plan")},
        {"navigate", "--config", c, "--seed", "3", "--out", dir("navigate")},
        {"report", "--runs", dir("train"), "--out", dir("report")},
    };
    for (const auto& cmd : commands)
      if (cli(cmd) != 0) failed.push_back(cmd[0] + " exited non-zero");
  }
  const auto a = text_outputs(root / "pass0"), b = text_outputs(root / "pass1");
  if (a.size() != b.size()) failed.push_back("different output file sets");
  std::set<std::string> subcommands;
  for (const auto& [name, body] : a) {
    ++compared;
    subcommands.insert(name.substr(0, name.find('/')));
    const auto it = b.find(name);
    if (it == b.end() || it->second != body) failed.push_back(name);
  }
  fs::remove_all(root);
  std::string detail = std::to_string(compared) + " CSV/JSON files from " + std::to_string(subcommands.size()) +
                       " subcommands compared byte for byte";
  if (!failed.empty()) detail += "; mismatches: " + failed.front() + (failed.size() > 1 ? " ..." : "");
  return {failed.empty() && subcommands.size() == 7, detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  Bench bench;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradients},
      {"divergence oracles", divergence_oracles},
      {"method ordering on mild shift", [&] { return ordering(bench); }},
      {"label shift narrows the mixing gain", [&] { return label_shift(bench); }},
      {"target discrepancy decreases", [&] { return discrepancy_trend(bench); }},
      {"wrong update order collapses", [&] { return collapse(bench); }},
      {"distance field exactness", edf_exactness},
      {"pose distance", se3},
      {"navigation suite", navigation},
      {"command-line determinism", determinism},
  };
  int passed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    ++ran;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    passed += v.pass;
    std::printf("[%s] criterion %d, %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", passed, ran);
  return passed == ran ? 0 : 1;
}
