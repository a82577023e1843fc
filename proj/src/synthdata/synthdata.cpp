#include "cali/synthdata/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cali/errors.hpp"
#include "cali/numkit/rng.hpp"
#include "cali/numkit/tensor_io.hpp"

namespace cali::synthdata {

namespace {

constexpr std::uint64_t kSourceStream = 11;
constexpr std::uint64_t kTargetStream = 12;

void require(bool ok, const std::string& what, const std::string& key) {
  if (!ok) throw ConfigError(what, key);
}

std::vector<double> normalized(std::vector<double> w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

std::size_t draw_class(nk::Rng& rng, const std::vector<double>& probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return probs.size() - 1;
}

std::string sample_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06zu.calt", prefix, i);
  return buf;
}

}  // namespace

void DomainSpec::validate() const {
  require(num_classes >= 2, "at least two classes are required", "data.num_classes");
  require(height >= 1 && width >= 1, "image size must be positive", "data.height");
  require(channels >= 1, "at least one channel is required", "data.channels");
  require(cells >= 1, "at least one Voronoi cell is required", "data.cells");
  require(classes.size() == num_classes, "one appearance per class is required", "data.classes");
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const std::string key = "data.classes[" + std::to_string(k) + "]";
    require(classes[k].mean.size() == channels, "mean must have one entry per channel", key + ".mean");
    require(classes[k].sigma > 0.0 && std::isfinite(classes[k].sigma), "sigma must be positive", key + ".sigma");
    for (double m : classes[k].mean) require(std::isfinite(m), "mean must be finite", key + ".mean");
  }
  require(ratios.size() == num_classes, "one ratio per class is required", "data.ratios");
  double total = 0.0;
  for (double r : ratios) {
    require(r >= 0.0 && std::isfinite(r), "ratios must be non-negative", "data.ratios");
    total += r;
  }
  require(std::fabs(total - 1.0) < 1e-9, "ratios must sum to 1", "data.ratios");
  require(shift.offset.empty() || shift.offset.size() == channels, "offset must have one entry per channel",
          "data.shift.offset");
  require(std::isfinite(shift.noise_delta), "noise_delta must be finite", "data.shift.noise_delta");
  for (std::size_t k = 0; k < num_classes; ++k)
    require(classes[k].sigma + shift.noise_delta > 0.0, "shifted sigma must stay positive", "data.shift.noise_delta");
  if (!shift.ratio_weights.empty()) {
    require(shift.ratio_weights.size() == num_classes, "one weight per class is required",
            "data.shift.ratio_weights");
    double reweighted = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      require(shift.ratio_weights[k] >= 0.0 && std::isfinite(shift.ratio_weights[k]),
              "weights must be non-negative", "data.shift.ratio_weights");
      reweighted += shift.ratio_weights[k] * ratios[k];
    }
    require(reweighted > 0.0, "reweighted ratios must not all vanish", "data.shift.ratio_weights");
  }
}

std::vector<double> DomainSpec::target_ratios() const {
  if (shift.ratio_weights.empty()) return ratios;
  std::vector<double> w(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) w[k] = ratios[k] * shift.ratio_weights[k];
  return normalized(std::move(w));
}

ClassAppearance DomainSpec::appearance(std::size_t k, Domain d) const {
  ClassAppearance a = classes.at(k);
  if (d == Domain::Target) {
    for (std::size_t c = 0; c < shift.offset.size(); ++c) a.mean[c] += shift.offset[c];
    a.sigma += shift.noise_delta;
  }
  return a;
}

DomainSpec default_spec() {
  DomainSpec s;
  s.classes = {{{0.0, 0.0, 0.0}, 0.35}, {{1.0, 0.6, 0.0}, 0.35}, {{2.0, 0.0, 0.6}, 0.35}, {{3.0, 0.6, 0.6}, 0.35}};
  s.ratios = {0.25, 0.25, 0.25, 0.25};
  s.shift.offset = {0.0, 0.0, 0.0};
  s.shift.ratio_weights = {1.0, 1.0, 1.0, 1.0};
  return s;
}

DomainSpec preset(const std::string& name) {
  DomainSpec s = default_spec();
  s.height = 16;
  s.width = 16;
  s.cells = 6;
  if (name == "mild-shift") {
    s.shift.offset = {1.5, 0.0, 0.0};
  } else if (name == "hard-shift") {
    s.shift.offset = {1.5, 0.0, 0.0};
    s.shift.ratio_weights = {6.0, 3.0, 0.5, 0.25};
  } else {
    throw ConfigError("unknown preset '" + name + "'", "data.preset");
  }
  return s;
}

std::vector<std::string> preset_names() { return {"mild-shift", "hard-shift"}; }

nlohmann::ordered_json to_json(const DomainSpec& spec) {
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (const auto& c : spec.classes) classes.push_back({{"mean", c.mean}, {"sigma", c.sigma}});
  return {{"num_classes", spec.num_classes},
          {"height", spec.height},
          {"width", spec.width},
          {"channels", spec.channels},
          {"classes", classes},
          {"ratios", spec.ratios},
          {"cells", spec.cells},
          {"shift",
           {{"offset", spec.shift.offset},
            {"noise_delta", spec.shift.noise_delta},
            {"ratio_weights", spec.shift.ratio_weights}}}};
}

namespace {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("wrong type", prefix + "." + key);
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError("expected an object", prefix);
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found) throw ConfigError("unknown key", prefix + "." + key);
  }
}

}  // namespace

DomainSpec spec_from_json(const nlohmann::json& j, const std::string& prefix) {
  DomainSpec s = default_spec();
  if (j.contains("preset")) {
    try {
      s = preset(j.at("preset").get<std::string>());
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("wrong type", prefix + ".preset");
    }
  }
  reject_unknown(j, {"preset", "num_classes", "height", "width", "channels", "classes", "ratios", "cells", "shift"},
                 prefix);
  read_key(j, "num_classes", s.num_classes, prefix);
  read_key(j, "height", s.height, prefix);
  read_key(j, "width", s.width, prefix);
  read_key(j, "channels", s.channels, prefix);
  read_key(j, "ratios", s.ratios, prefix);
  read_key(j, "cells", s.cells, prefix);
  if (j.contains("classes")) {
    const auto& arr = j.at("classes");
    if (!arr.is_array()) throw ConfigError("expected an array", prefix + ".classes");
    s.classes.clear();
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const std::string key = prefix + ".classes[" + std::to_string(k) + "]";
      reject_unknown(arr[k], {"mean", "sigma"}, key);
      ClassAppearance a;
      read_key(arr[k], "mean", a.mean, key);
      read_key(arr[k], "sigma", a.sigma, key);
      s.classes.push_back(std::move(a));
    }
  }
  if (j.contains("shift")) {
    const auto& sh = j.at("shift");
    reject_unknown(sh, {"offset", "noise_delta", "ratio_weights"}, prefix + ".shift");
    read_key(sh, "offset", s.shift.offset, prefix + ".shift");
    read_key(sh, "noise_delta", s.shift.noise_delta, prefix + ".shift");
    read_key(sh, "ratio_weights", s.shift.ratio_weights, prefix + ".shift");
  }
  s.validate();
  return s;
}

Sample generate_sample(const DomainSpec& spec, Domain domain, std::uint64_t seed) {
  spec.validate();
  nk::Rng rng(seed);
  const std::vector<double> probs = domain == Domain::Target ? spec.target_ratios() : spec.ratios;
  const std::size_t n = spec.cells, H = spec.height, W = spec.width, K = spec.num_classes, C = spec.channels;

  std::vector<double> sy(n), sx(n);
  std::vector<std::size_t> sk(n);
  for (std::size_t i = 0; i < n; ++i) {
    sy[i] = rng.uniform(0.0, static_cast<double>(H));
    sx[i] = rng.uniform(0.0, static_cast<double>(W));
    sk[i] = draw_class(rng, probs);
  }

  std::vector<ClassAppearance> look(K);
  for (std::size_t k = 0; k < K; ++k) look[k] = spec.appearance(k, domain);

  Sample s{nk::Tensor({C, H, W}), nk::Tensor({K, H, W})};
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) {
      const double py = h + 0.5, px = w + 0.5;
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        const double d = (py - sy[i]) * (py - sy[i]) + (px - sx[i]) * (px - sx[i]);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      const std::size_t k = sk[best];
      s.y.at(k, h, w) = 1.0;
      for (std::size_t c = 0; c < C; ++c) s.x.at(c, h, w) = look[k].mean[c] + look[k].sigma * rng.normal();
    }
  }
  return s;
}

std::pair<Dataset, Dataset> generate_domain_pair(const DomainSpec& spec, std::size_t n_source, std::size_t n_target,
                                                 std::uint64_t seed) {
  spec.validate();
  if (n_source < 1 || n_target < 1) throw ConfigError("sample counts must be at least 1", "data.count");
  auto make = [&](Domain d, std::size_t count, std::uint64_t stream) {
    Dataset ds{spec, seed, d, d == Domain::Target, {}};
    const std::uint64_t base = nk::derive_seed(seed, stream);
    ds.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) ds.samples.push_back(generate_sample(spec, d, nk::derive_seed(base, i)));
    return ds;
  };
  return {make(Domain::Source, n_source, kSourceStream), make(Domain::Target, n_target, kTargetStream)};
}

nk::Tensor class_ids(const nk::Tensor& y) {
  if (y.rank() != 3) throw ShapeError("class_ids expects K x H x W, got " + nk::shape_string(y.shape()));
  const std::size_t K = y.dim(0), HW = y.dim(1) * y.dim(2);
  nk::Tensor out({y.dim(1), y.dim(2)});
  for (std::size_t i = 0; i < HW; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (y[k * HW + i] > y[best * HW + i]) best = k;
    out[i] = static_cast<double>(best);
  }
  return out;
}

LabelMap LabelMap::identity(std::size_t k) {
  LabelMap m;
  m.group_of.resize(k);
  std::iota(m.group_of.begin(), m.group_of.end(), std::size_t{0});
  return m;
}

std::size_t LabelMap::num_groups() const {
  std::size_t g = 0;
  for (std::size_t v : group_of) g = std::max(g, v + 1);
  return g;
}

void LabelMap::validate() const {
  if (group_of.empty()) throw ContractError("label map is empty");
  std::vector<bool> used(num_groups(), false);
  for (std::size_t v : group_of) used[v] = true;
  for (std::size_t g = 0; g < used.size(); ++g)
    if (!used[g]) throw ContractError("group ids must be contiguous from 0; group " + std::to_string(g) + " is empty");
}

nk::Tensor remap_labels(const nk::Tensor& y, const LabelMap& map) {
  if (y.rank() != 3) throw ShapeError("remap_labels expects K x H x W, got " + nk::shape_string(y.shape()));
  const std::size_t K = y.dim(0), HW = y.dim(1) * y.dim(2);
  if (map.group_of.size() < K)
    throw ContractError("class id " + std::to_string(map.group_of.size()) + " has no group");
  map.validate();
  const std::size_t G = map.num_groups();
  nk::Tensor out({G, y.dim(1), y.dim(2)});
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t g = map.group_of[k];
    for (std::size_t i = 0; i < HW; ++i) out[g * HW + i] += y[k * HW + i];
  }
  return out;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const nlohmann::ordered_json manifest{{"format", "cali-dataset"},
                                        {"version", 1},
                                        {"count", ds.samples.size()},
                                        {"domain", std::string(domain_name(ds.domain))},
                                        {"eval_only", ds.eval_only},
                                        {"seed", ds.seed},
                                        {"spec", to_json(ds.spec)}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    nk::save_tensor(dir / sample_name("img", i), ds.samples[i].x);
    nk::save_tensor(dir / sample_name("lbl", i), ds.samples[i].y);
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("cannot read " + manifest_path.string());
  std::stringstream text;
  text << in.rdbuf();
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what(), e.byte);
  }
  Dataset ds;
  std::size_t count = 0;
  try {
    if (m.at("format").get<std::string>() != "cali-dataset" || m.at("version").get<int>() != 1)
      throw FormatError(manifest_path.string() + ": not a version 1 dataset manifest", 0);
    count = m.at("count").get<std::size_t>();
    const std::string domain = m.at("domain").get<std::string>();
    if (domain == "source")
      ds.domain = Domain::Source;
    else if (domain == "target")
      ds.domain = Domain::Target;
    else
      throw FormatError(manifest_path.string() + ": bad domain '" + domain + "'", 0);
    ds.eval_only = m.at("eval_only").get<bool>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.spec = spec_from_json(m.at("spec"), "manifest.spec");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what(), 0);
  } catch (const ConfigError& e) {
    throw FormatError(manifest_path.string() + ": " + e.what(), 0);
  }

  for (std::size_t i = 0;; ++i) {
    const auto img = dir / sample_name("img", i);
    const auto lbl = dir / sample_name("lbl", i);
    const bool has_img = std::filesystem::exists(img), has_lbl = std::filesystem::exists(lbl);
    if (!has_img && !has_lbl) break;
    if (i >= count || has_img != has_lbl)
      throw FormatError(dir.string() + ": manifest count " + std::to_string(count) + " does not match sample files",
                        0);
    Sample s{nk::load_tensor(img), nk::load_tensor(lbl)};
    const nk::Shape xs{ds.spec.channels, ds.spec.height, ds.spec.width};
    const nk::Shape ys{ds.spec.num_classes, ds.spec.height, ds.spec.width};
    if (s.x.shape() != xs || s.y.shape() != ys)
      throw FormatError(img.string() + ": sample shape does not match the manifest", 0);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.size() != count)
    throw FormatError(dir.string() + ": manifest count " + std::to_string(count) + " but found " +
                          std::to_string(ds.samples.size()) + " samples",
                      0);
  return ds;
}

}  // namespace cali::synthdata
