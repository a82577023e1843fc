#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "cali/cli/cli.hpp"
#include "cali/divergence/divergence.hpp"
#include "cali/errors.hpp"
#include "cali/evalkit/evalkit.hpp"
#include "cali/numkit/rng.hpp"

namespace cali::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string name_with_index(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02zu%s", stem, i, ext);
  return buf;
}

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "out";

  RunConfig load() const { return config_path.empty() ? RunConfig{} : load_run_config(config_path); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "RunConfig JSON file (defaults when omitted)");
  cmd->add_option("--seed", c.seed, "Single source of randomness")->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

// Data for an experiment: read from `data_dir` when given, else generated.
ExperimentData load_or_generate(const RunConfig& cfg, std::uint64_t seed, const std::string& data_dir) {
  if (data_dir.empty()) return make_experiment_data(cfg.data, seed);
  const fs::path d(data_dir);
  return {synthdata::read_dataset(d / "source"), synthdata::read_dataset(d / "target"),
          synthdata::read_dataset(d / "eval")};
}

evalkit::EvalRecord evaluate_record(const models::ModelBundle& bundle, const synthdata::Dataset& eval,
                                    std::int64_t iteration) {
  std::vector<nk::Tensor> images, labels;
  for (const auto& s : eval.samples) {
    images.push_back(s.x);
    labels.push_back(s.y);
  }
  const auto cm = evalkit::evaluate(bundle, images, labels);
  return {iteration, evalkit::iou_per_class(cm), evalkit::miou(cm), evalkit::target_discrepancy(bundle, images)};
}

void write_eval(const fs::path& dir, const evalkit::EvalRecord& rec, std::size_t num_classes) {
  write_text(dir / "eval.csv", evalkit::to_csv(std::span(&rec, 1), num_classes));
  write_text(dir / "eval.json", evalkit::to_json(rec).dump(2) + "\n");
}

// ---- gen-data --------------------------------------------------------------

int cmd_gen_data(const Common& c, std::ostream& out) {
  const RunConfig cfg = c.load();
  const auto data = make_experiment_data(cfg.data, c.seed);
  const fs::path dir(c.out);
  make_dir(dir);
  synthdata::write_dataset(data.source, dir / "source");
  synthdata::write_dataset(data.target, dir / "target");
  synthdata::write_dataset(data.eval, dir / "eval");
  out << "wrote " << data.source.size() << " source, " << data.target.size() << " target and " << data.eval.size()
      << " evaluation images to " << dir.string() << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const Common& c, const std::string& method, const std::string& data_dir, std::ostream& out) {
  RunConfig cfg = c.load();
  if (!method.empty()) cfg.train.method = trainer::parse_method(method);
  cfg.train.seed = expand_seed(c.seed).train;
  const auto data = load_or_generate(cfg, c.seed, data_dir);
  const fs::path dir(c.out);
  make_dir(dir);

  trainer::RunOptions opts;
  opts.arch = cfg.arch;
  opts.eval_set = &data.eval;
  opts.output_dir = dir;
  const auto result = trainer::run(cfg.train, data.source, data.target, opts);

  models::save_checkpoint(dir / "final.ckpt", result.bundle, cfg.train.max_iters);
  const evalkit::EvalRecord rec{cfg.train.max_iters, result.final_iou, result.final_miou, result.final_discrepancy};
  write_eval(dir, rec, cfg.arch.num_classes);

  ojson summary = {{"method", trainer::method_name(cfg.train.method)},
                   {"seed", c.seed},
                   {"max_iters", cfg.train.max_iters},
                   {"ablation_wrong_order", cfg.train.ablation_wrong_order},
                   {"final_miou", result.final_miou},
                   {"final_discrepancy", result.final_discrepancy},
                   {"da_steps", result.da_steps},
                   {"ca_steps", result.ca_steps},
                   {"icali_steps", result.icali_steps},
                   {"d_confident_at", result.d_confident_at ? ojson(*result.d_confident_at) : ojson(nullptr)}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
  out << trainer::method_name(cfg.train.method) << " seed " << c.seed << ": target mIoU "
      << evalkit::format_number(result.final_miou) << "\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data_dir, std::ostream& out) {
  const RunConfig cfg = c.load();
  const auto ckpt = models::load_checkpoint(checkpoint);
  synthdata::Dataset eval = data_dir.empty() ? make_experiment_data(cfg.data, c.seed).eval
                                             : synthdata::read_dataset(fs::path(data_dir) / "eval");
  if (eval.spec.num_classes != ckpt.bundle.config.num_classes)
    throw ConfigError("checkpoint and data disagree on the class count", "data.num_classes");
  const fs::path dir(c.out);
  make_dir(dir);
  const auto rec = evaluate_record(ckpt.bundle, eval, ckpt.iteration);
  write_eval(dir, rec, ckpt.bundle.config.num_classes);
  out << "target mIoU " << evalkit::format_number(rec.miou) << " over " << eval.size() << " images\n";
  return 0;
}

// ---- divergence ------------------------------------------------------------

int cmd_divergence(const Common& c, const std::string& preset, std::size_t images, std::size_t per_image,
                   std::ostream& out) {
  RunConfig cfg = c.load();
  if (preset == "mild-shift" || preset == "hard-shift") {
    cfg.data.spec = synthdata::preset(preset);
  } else if (preset != "identical" && preset != "config") {
    throw ConfigError("expected identical, mild-shift, hard-shift or config", "divergence.preset");
  }
  if (images < 1 || per_image < 1) throw ConfigError("must be at least 1", "divergence.images");
  const SeedPlan plan = expand_seed(c.seed);
  auto [src, tgt] = synthdata::generate_domain_pair(cfg.data.spec, images, images, plan.data);
  std::vector<nk::Tensor> xs, xt;
  for (const auto& s : src.samples) xs.push_back(s.x);
  for (const auto& s : tgt.samples) xt.push_back(s.x);
  if (preset == "identical") xt = xs;

  divergence::SampleSets sets = divergence::pixel_samples(xs, xt, per_image, plan.eval);
  if (preset == "identical") sets.target = sets.source;

  // brute-force oracles on the first channel of a bounded subsample
  divergence::SampleSets line;
  const std::size_t cap = 48;
  for (std::size_t i = 0; i < std::min(cap, sets.source.size()); ++i) line.source.push_back({sets.source[i][0]});
  for (std::size_t i = 0; i < std::min(cap, sets.target.size()); ++i) line.target.push_back({sets.target[i][0]});
  const auto h = divergence::threshold_class(line);
  const auto hd = divergence::unite(h, divergence::symmetric_difference(h));
  const auto bound = divergence::bound_relation_check(line, h, hd);

  divergence::DivergenceReport report;
  report.estimate = divergence::estimate_h_divergence(sets, 500, plan.train);
  report.brute_force_h = divergence::brute_force_h_divergence(line, h);
  report.brute_force_hdh = bound.d_hdh;
  report.holds = bound.holds;

  const fs::path dir(c.out);
  make_dir(dir);
  ojson j = ojson::parse(report.to_json());
  j["preset"] = preset;
  j["samples_per_domain"] = sets.source.size();
  write_text(dir / "divergence.json", j.dump(2) + "\n");
  out << j.dump() << "\n";
  return 0;
}

// ---- plan / navigate -------------------------------------------------------

navsim::World scenario_world(const std::string& scenario, std::size_t index, std::uint64_t sim_seed) {
  if (scenario == "suite") return navsim::benchmark_world(nk::derive_seed(sim_seed, index));
  if (scenario == "empty") return navsim::empty_world();
  if (scenario == "gap") return navsim::wall_with_gap_world(nk::derive_seed(sim_seed, index));
  if (scenario == "box") return navsim::sealed_box_world();
  throw ConfigError("expected suite, empty, gap or box", "scenario");
}

std::optional<models::ModelBundle> load_bundle(const std::string& checkpoint) {
  if (checkpoint.empty()) return std::nullopt;
  return models::load_checkpoint(checkpoint).bundle;
}

int cmd_plan(const Common& c, const std::string& scenario, std::size_t index, const std::string& checkpoint,
             std::ostream& out) {
  const RunConfig cfg = c.load();
  const SeedPlan plan = expand_seed(c.seed);
  const navsim::World world = scenario_world(scenario, index, plan.sim);
  world.validate(cfg.sim.robot_radius);
  const auto bundle = load_bundle(checkpoint);
  const planner::Grid mask = bundle ? navsim::model_segmentation(*bundle, cfg.data.spec, plan.sim)(
                                          world, world.start, cfg.planner.camera)
                                    : navsim::render_segmentation(world, world.start, cfg.planner.camera);
  const auto lib = planner::build_library(cfg.planner);
  const auto result = planner::plan_frame(mask, lib, navsim::relative(world.start, world.goal), cfg.planner);

  const fs::path dir(c.out);
  make_dir(dir);
  planner::write_mask_pgm(dir / "mask.pgm", mask);
  planner::write_field_pgm(dir / "field.pgm", result.field);
  ojson trace = planner::plan_trace(lib, result.selection);
  trace["boundary_points"] = result.boundary.size();
  trace["d_max"] = result.field.d_max;
  write_text(dir / "trace.json", trace.dump(2) + "\n");
  out << "selected primitive " << result.selection.index << " (omega " << lib[result.selection.index].omega
      << ")\n";
  return 0;
}

int cmd_navigate(const Common& c, const std::string& scenario, bool dump, const std::string& checkpoint,
                 std::ostream& out) {
  RunConfig cfg = c.load();
  const SeedPlan plan = expand_seed(c.seed);
  cfg.sim.seed = plan.sim;
  const auto bundle = load_bundle(checkpoint);
  navsim::SegmentationSource source;
  const fs::path dir(c.out);
  make_dir(dir);

  const std::size_t n = scenario == "suite" || scenario == "gap" ? cfg.sim.suite_size : 1;
  std::size_t reached = 0, collided = 0, timeout = 0;
  ojson episodes = ojson::array();
  for (std::size_t i = 0; i < n; ++i) {
    const navsim::World world = scenario_world(scenario, i, plan.sim);
    if (bundle) source = navsim::model_segmentation(*bundle, cfg.data.spec, nk::derive_seed(plan.sim, 100 + i));
    std::optional<navsim::DumpOptions> dump_opts;
    if (dump) {
      dump_opts = navsim::DumpOptions{dir / name_with_index("frames", i, "")};
      make_dir(dump_opts->dir);
    }
    const auto log = navsim::run_episode(world, cfg.planner, cfg.sim, source, dump_opts);
    write_text(dir / name_with_index("episode", i, ".json"), navsim::to_json(log).dump(2) + "\n");
    reached += log.outcome == navsim::Outcome::Reached;
    collided += log.outcome == navsim::Outcome::Collided;
    timeout += log.outcome == navsim::Outcome::Timeout;
    episodes.push_back({{"index", i},
                        {"outcome", navsim::outcome_name(log.outcome)},
                        {"path_length", log.path_length},
                        {"steps", log.steps.size()}});
  }
  const ojson summary = {{"scenario", scenario},
                         {"episodes", n},
                         {"reached", reached},
                         {"collided", collided},
                         {"timeout", timeout},
                         {"literal_clearance", cfg.planner.literal_clearance},
                         {"runs", episodes}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << scenario << ": " << reached << "/" << n << " reached, " << collided << " collided, " << timeout
      << " timed out\n";
  return 0;
}

// ---- report ----------------------------------------------------------------

// Last data row of an eval.csv written by train or eval.
double read_eval_miou(const fs::path& csv) {
  std::stringstream ss(read_text(csv));
  std::string header, line, last;
  std::getline(ss, header);
  while (std::getline(ss, line))
    if (!line.empty()) last = line;
  std::vector<std::string> names, cells;
  std::stringstream hs(header), ls(last);
  for (std::string cell; std::getline(hs, cell, ',');) names.push_back(cell);
  for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
  const auto it = std::find(names.begin(), names.end(), "miou");
  if (it == names.end() || cells.size() != names.size()) throw FormatError(csv.string() + ": no miou column", 0);
  try {
    return std::stod(cells[static_cast<std::size_t>(it - names.begin())]);
  } catch (const std::exception&) {
    throw FormatError(csv.string() + ": miou is not a number", 0);
  }
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out_dir, std::ostream& out) {
  if (runs.empty()) throw ConfigError("at least one run directory is required", "report.runs");
  struct Entry {
    std::string method;
    std::uint64_t seed;
    double miou;
  };
  std::vector<Entry> entries;
  for (const auto& r : runs) {
    const fs::path dir(r);
    nlohmann::json s;
    try {
      s = nlohmann::json::parse(read_text(dir / "summary.json"));
      entries.push_back({s.at("method").get<std::string>(), s.at("seed").get<std::uint64_t>(),
                         read_eval_miou(dir / "eval.csv")});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError((dir / "summary.json").string() + ": " + e.what(), 0);
    }
  }
  const std::vector<std::string> order{"so", "da", "ca", "cali", "icali"};
  std::string csv = "method,runs,seeds,miou_mean,miou_min,miou_max\n";
  ojson rows = ojson::array();
  for (const auto& m : order) {
    std::vector<Entry> mine;
    for (const auto& e : entries)
      if (e.method == m) mine.push_back(e);
    if (mine.empty()) continue;
    std::sort(mine.begin(), mine.end(), [](const Entry& a, const Entry& b) { return a.seed < b.seed; });
    double sum = 0.0, lo = mine.front().miou, hi = lo;
    std::string seeds;
    ojson per_seed = ojson::array();
    for (const auto& e : mine) {
      sum += e.miou;
      lo = std::min(lo, e.miou);
      hi = std::max(hi, e.miou);
      seeds += (seeds.empty() ? "" : ";") + std::to_string(e.seed);
      per_seed.push_back({{"seed", e.seed}, {"miou", e.miou}});
    }
    const double mean = sum / static_cast<double>(mine.size());
    csv += m + "," + std::to_string(mine.size()) + "," + seeds + "," + evalkit::format_number(mean) + "," +
           evalkit::format_number(lo) + "," + evalkit::format_number(hi) + "\n";
    rows.push_back({{"method", m}, {"runs", mine.size()}, {"miou_mean", mean}, {"per_seed", per_seed}});
  }
  const fs::path dir(out_dir);
  make_dir(dir);
  write_text(dir / "report.csv", csv);
  write_text(dir / "report.json", rows.dump(2) + "\n");
  out << csv;
  return 0;
}

std::string keys_footer() {
  std::string s = "Configuration keys (JSON sections data, arch, train, planner, sim) and defaults:\n";
  for (const auto& [key, value] : documented_keys()) s += "  " + key + " = " + value + "\n";
  s += "Exit codes: 0 ok, 1 other failure, 2 configuration error, 3 numeric abort, 4 I/O or format error.\n";
  return s;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain-adaptive segmentation experiments and a visual navigation planner", "cali"};
  app.require_subcommand(1);
  app.footer(keys_footer());

  Common common;
  std::string method, data_dir, checkpoint, preset = "config", scenario = "suite", out_dir = "report";
  std::size_t images = 32, per_image = 8, index = 0;
  bool dump = false;
  std::vector<std::string> runs;

  auto* gen = app.add_subcommand("gen-data", "Write the source, target and evaluation datasets");
  add_common(gen, common);

  auto* train = app.add_subcommand("train", "Train one method and write metrics, checkpoints and a summary");
  add_common(train, common);
  train->add_option("--method", method, "so, da, ca, cali or icali (overrides train.method)");
  train->add_option("--data", data_dir, "Directory written by gen-data (generated from the seed when omitted)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out target images");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Directory written by gen-data");

  auto* div = app.add_subcommand("divergence", "Estimate the domain divergence and check the brute-force bound");
  add_common(div, common);
  div->add_option("--preset", preset, "identical, mild-shift, hard-shift or config")->capture_default_str();
  div->add_option("--images", images, "Images per domain")->capture_default_str();
  div->add_option("--per-image", per_image, "Pixels sampled per image")->capture_default_str();

  auto* plan = app.add_subcommand("plan", "Plan one frame from a world's start pose and dump the fields");
  add_common(plan, common);
  plan->add_option("--scenario", scenario, "suite, empty, gap or box")->capture_default_str();
  plan->add_option("--index", index, "World index within the scenario")->capture_default_str();
  plan->add_option("--checkpoint", checkpoint, "Segment rendered textures with this model instead");

  auto* nav = app.add_subcommand("navigate", "Run closed-loop navigation episodes");
  add_common(nav, common);
  nav->add_option("--scenario", scenario, "suite, empty, gap or box")->capture_default_str();
  nav->add_flag("--dump", dump, "Write per-step mask and field images");
  nav->add_option("--checkpoint", checkpoint, "Segment rendered textures with this model instead");

  auto* rep = app.add_subcommand("report", "Aggregate training runs into a per-method table");
  rep->add_option("--runs", runs, "Run directories written by train")->required();
  rep->add_option("--out", out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(common, out);
    if (*train) return cmd_train(common, method, data_dir, out);
    if (*eval) return cmd_eval(common, checkpoint, data_dir, out);
    if (*div) return cmd_divergence(common, preset, images, per_image, out);
    if (*plan) return cmd_plan(common, scenario, index, checkpoint, out);
    if (*nav) return cmd_navigate(common, scenario, dump, checkpoint, out);
    if (*rep) return cmd_report(runs, out_dir, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace cali::cli
