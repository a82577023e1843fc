#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cali/domain.hpp"
#include "cali/numkit/tensor.hpp"
#include "json.hpp"

namespace cali::synthdata {

struct ClassAppearance {
  std::vector<double> mean;  // one entry per channel
  double sigma = 0.1;        // per-pixel Gaussian texture noise

  friend bool operator==(const ClassAppearance&, const ClassAppearance&) = default;
};

// Applied on top of the base appearance to produce the target domain.
struct DomainShift {
  std::vector<double> offset;          // added to every class mean
  double noise_delta = 0.0;            // added to every class sigma
  std::vector<double> ratio_weights;   // multiplies the class-ratio profile, then renormalized

  friend bool operator==(const DomainShift&, const DomainShift&) = default;
};

struct DomainSpec {
  std::size_t num_classes = 4;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::vector<ClassAppearance> classes;
  std::vector<double> ratios;  // expected pixel fraction per class
  std::size_t cells = 8;       // Voronoi sites per image
  DomainShift shift;

  // Throws ConfigError with a "data.*" key path.
  void validate() const;
  std::vector<double> target_ratios() const;
  ClassAppearance appearance(std::size_t k, Domain d) const;

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

// Spec with all defaults filled in: 3x32x32 images, K = 4, no shift.
DomainSpec default_spec();
// "mild-shift" or "hard-shift"; throws ConfigError for any other name.
DomainSpec preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::ordered_json to_json(const DomainSpec& spec);
// Missing keys keep their defaults; unknown keys throw ConfigError.
DomainSpec spec_from_json(const nlohmann::json& j, const std::string& prefix = "data");

struct Sample {
  nk::Tensor x;  // C x H x W
  nk::Tensor y;  // one-hot K x H x W

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  DomainSpec spec;
  std::uint64_t seed = 0;
  Domain domain = Domain::Source;
  bool eval_only = false;  // target labels are kept for evaluation only
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

Sample generate_sample(const DomainSpec& spec, Domain domain, std::uint64_t seed);

// Sample i of each domain is drawn from derive_seed(domain seed, i), so any
// index can be regenerated in isolation.
std::pair<Dataset, Dataset> generate_domain_pair(const DomainSpec& spec, std::size_t n_source,
                                                 std::size_t n_target, std::uint64_t seed);

// Class-id map (H x W) of a one-hot label.
nk::Tensor class_ids(const nk::Tensor& y);

struct LabelMap {
  std::vector<std::size_t> group_of;  // raw id -> group id

  static LabelMap identity(std::size_t k);
  std::size_t num_groups() const;
  // Throws ContractError unless the groups are exactly 0..G-1.
  void validate() const;
};

nk::Tensor remap_labels(const nk::Tensor& y, const LabelMap& map);

// Directory layout: manifest.json, img_%06d.calt, lbl_%06d.calt.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace cali::synthdata
