#include <fstream>
#include <set>
#include <sstream>

#include "cali/cli/cli.hpp"
#include "cali/errors.hpp"
#include "cali/numkit/rng.hpp"

namespace cali::cli {

namespace {

using json = nlohmann::json;

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError("expected an object", path);
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& path) {
  require_object(j, path);
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown key", path.empty() ? key : path + "." + key);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  const std::string where = path + "." + key;
  // reject silent conversions between booleans, numbers and strings
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("expected a boolean", where);
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError("expected an integer", where);
    if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned())
      throw ConfigError("must be non-negative", where);
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("expected a number", where);
  }
  try {
    out = v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("wrong type", where);
  }
}

DataConfig parse_data(const json& j) {
  require_object(j, "data");
  DataConfig d;
  json spec = j;
  for (const char* key : {"n_source", "n_target", "n_eval"}) spec.erase(key);
  d.spec = synthdata::spec_from_json(spec, "data");
  read(j, "n_source", d.n_source, "data");
  read(j, "n_target", d.n_target, "data");
  read(j, "n_eval", d.n_eval, "data");
  if (d.n_source < 1) throw ConfigError("must be at least 1", "data.n_source");
  if (d.n_target < 1) throw ConfigError("must be at least 1", "data.n_target");
  if (d.n_eval < 1) throw ConfigError("must be at least 1", "data.n_eval");
  return d;
}

models::ArchitectureConfig parse_arch(const json& j) {
  reject_unknown(j, {"in_channels", "num_classes", "feature_channels", "extractor_depth", "discriminator_channels",
                     "leaky_slope"},
                 "arch");
  models::ArchitectureConfig a;
  read(j, "in_channels", a.in_channels, "arch");
  read(j, "num_classes", a.num_classes, "arch");
  read(j, "feature_channels", a.feature_channels, "arch");
  read(j, "extractor_depth", a.extractor_depth, "arch");
  read(j, "discriminator_channels", a.discriminator_channels, "arch");
  read(j, "leaky_slope", a.leaky_slope, "arch");
  try {
    a.validate();
  } catch (const ConfigError& e) {
    if (!e.key_path().empty()) throw;
    throw ConfigError(e.what(), "arch");
  }
  return a;
}

trainer::TrainConfig parse_train(const json& j) {
  reject_unknown(j, {"method", "max_iters", "interval", "lr_da", "lr_ca", "lr_d", "split_ratio", "iou_window",
                     "ablation_wrong_order", "log_every", "checkpoint_every", "eval_images"},
                 "train");
  trainer::TrainConfig t;
  if (j.contains("method")) {
    if (!j.at("method").is_string()) throw ConfigError("expected a string", "train.method");
    t.method = trainer::parse_method(j.at("method").get<std::string>());
  }
  read(j, "max_iters", t.max_iters, "train");
  read(j, "interval", t.interval, "train");
  read(j, "lr_da", t.lr_da, "train");
  read(j, "lr_ca", t.lr_ca, "train");
  read(j, "lr_d", t.lr_d, "train");
  read(j, "split_ratio", t.split_ratio, "train");
  read(j, "iou_window", t.iou_window, "train");
  read(j, "ablation_wrong_order", t.ablation_wrong_order, "train");
  read(j, "log_every", t.log_every, "train");
  read(j, "checkpoint_every", t.checkpoint_every, "train");
  read(j, "eval_images", t.eval_images, "train");
  t.validate();
  return t;
}

planner::PlannerConfig parse_planner(const json& j) {
  reject_unknown(j, {"n_primitives", "speed", "omega_max", "horizon", "samples", "alpha", "v_thres_fraction", "w1",
                     "w2", "a", "b", "literal_clearance", "camera"},
                 "planner");
  planner::PlannerConfig p;
  read(j, "n_primitives", p.n_primitives, "planner");
  read(j, "speed", p.speed, "planner");
  read(j, "omega_max", p.omega_max, "planner");
  read(j, "horizon", p.horizon, "planner");
  read(j, "samples", p.samples, "planner");
  read(j, "alpha", p.alpha, "planner");
  read(j, "v_thres_fraction", p.v_thres_fraction, "planner");
  read(j, "w1", p.weights.w1, "planner");
  read(j, "w2", p.weights.w2, "planner");
  read(j, "a", p.weights.a, "planner");
  read(j, "b", p.weights.b, "planner");
  read(j, "literal_clearance", p.literal_clearance, "planner");
  if (j.contains("camera")) {
    const auto& c = j.at("camera");
    const std::string path = "planner.camera";
    reject_unknown(c, {"fx", "fy", "cx", "cy", "height", "pitch", "image_h", "image_w"}, path);
    read(c, "fx", p.camera.fx, path);
    read(c, "fy", p.camera.fy, path);
    read(c, "cx", p.camera.cx, path);
    read(c, "cy", p.camera.cy, path);
    read(c, "height", p.camera.height, path);
    read(c, "pitch", p.camera.pitch, path);
    read(c, "image_h", p.camera.image_h, path);
    read(c, "image_w", p.camera.image_w, path);
  }
  p.validate();
  return p;
}

navsim::SimConfig parse_sim(const json& j) {
  reject_unknown(j, {"dt", "goal_tolerance", "robot_radius", "max_steps", "suite_size"}, "sim");
  navsim::SimConfig s;
  read(j, "dt", s.dt, "sim");
  read(j, "goal_tolerance", s.goal_tolerance, "sim");
  read(j, "robot_radius", s.robot_radius, "sim");
  read(j, "max_steps", s.max_steps, "sim");
  read(j, "suite_size", s.suite_size, "sim");
  s.validate();
  return s;
}

void flatten(const nlohmann::ordered_json& j, const std::string& prefix,
             std::vector<std::pair<std::string, std::string>>& out) {
  // arrays of objects (the class appearances) are listed whole
  if (j.is_object()) {
    for (const auto& [key, value] : j.items()) flatten(value, prefix.empty() ? key : prefix + "." + key, out);
    return;
  }
  out.emplace_back(prefix, j.dump());
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  reject_unknown(j, {"data", "arch", "train", "planner", "sim"}, "");
  RunConfig c;
  if (j.contains("data")) c.data = parse_data(j.at("data"));
  if (j.contains("arch")) c.arch = parse_arch(j.at("arch"));
  if (j.contains("train")) c.train = parse_train(j.at("train"));
  if (j.contains("planner")) c.planner = parse_planner(j.at("planner"));
  if (j.contains("sim")) c.sim = parse_sim(j.at("sim"));
  if (c.arch.num_classes != c.data.spec.num_classes)
    throw ConfigError("must equal data.num_classes", "arch.num_classes");
  if (c.arch.in_channels != c.data.spec.channels) throw ConfigError("must equal data.channels", "arch.in_channels");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("not valid JSON: ") + e.what(), path.string());
  }
  return parse_run_config(j);
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json data = synthdata::to_json(c.data.spec);
  data["n_source"] = c.data.n_source;
  data["n_target"] = c.data.n_target;
  data["n_eval"] = c.data.n_eval;
  const auto& a = c.arch;
  const auto& t = c.train;
  const auto& p = c.planner;
  const auto& s = c.sim;
  return {{"data", data},
          {"arch",
           {{"in_channels", a.in_channels},
            {"num_classes", a.num_classes},
            {"feature_channels", a.feature_channels},
            {"extractor_depth", a.extractor_depth},
            {"discriminator_channels", a.discriminator_channels},
            {"leaky_slope", a.leaky_slope}}},
          {"train",
           {{"method", trainer::method_name(t.method)},
            {"max_iters", t.max_iters},
            {"interval", t.interval},
            {"lr_da", t.lr_da},
            {"lr_ca", t.lr_ca},
            {"lr_d", t.lr_d},
            {"split_ratio", t.split_ratio},
            {"iou_window", t.iou_window},
            {"ablation_wrong_order", t.ablation_wrong_order},
            {"log_every", t.log_every},
            {"checkpoint_every", t.checkpoint_every},
            {"eval_images", t.eval_images}}},
          {"planner",
           {{"n_primitives", p.n_primitives},
            {"speed", p.speed},
            {"omega_max", p.omega_max},
            {"horizon", p.horizon},
            {"samples", p.samples},
            {"alpha", p.alpha},
            {"v_thres_fraction", p.v_thres_fraction},
            {"w1", p.weights.w1},
            {"w2", p.weights.w2},
            {"a", p.weights.a},
            {"b", p.weights.b},
            {"literal_clearance", p.literal_clearance},
            {"camera",
             {{"fx", p.camera.fx},
              {"fy", p.camera.fy},
              {"cx", p.camera.cx},
              {"cy", p.camera.cy},
              {"height", p.camera.height},
              {"pitch", p.camera.pitch},
              {"image_h", p.camera.image_h},
              {"image_w", p.camera.image_w}}}}},
          {"sim",
           {{"dt", s.dt},
            {"goal_tolerance", s.goal_tolerance},
            {"robot_radius", s.robot_radius},
            {"max_steps", s.max_steps},
            {"suite_size", s.suite_size}}}};
}

std::vector<std::pair<std::string, std::string>> documented_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("data.preset", "(none; one of mild-shift, hard-shift)");
  flatten(to_json(RunConfig{}), "", out);
  return out;
}

SeedPlan expand_seed(std::uint64_t seed) {
  return {nk::derive_seed(seed, 1), nk::derive_seed(seed, 2), nk::derive_seed(seed, 3), nk::derive_seed(seed, 4)};
}

ExperimentData make_experiment_data(const DataConfig& data, std::uint64_t seed) {
  const SeedPlan plan = expand_seed(seed);
  auto [source, target] = synthdata::generate_domain_pair(data.spec, data.n_source, data.n_target, plan.data);
  auto eval = synthdata::generate_domain_pair(data.spec, 1, data.n_eval, plan.eval).second;
  return {std::move(source), std::move(target), std::move(eval)};
}

}  // namespace cali::cli
