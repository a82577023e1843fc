#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cali/numkit/graph.hpp"
#include "cali/numkit/ops.hpp"
#include "cali/numkit/optim.hpp"

namespace cali::models {

struct ArchitectureConfig {
  std::size_t in_channels = 3;
  std::size_t num_classes = 4;
  std::size_t feature_channels = 16;
  std::size_t extractor_depth = 3;
  // Output channels of the stride-2 4x4 discriminator convolutions; the last must be 1.
  std::vector<std::size_t> discriminator_channels{16, 32, 1};
  double leaky_slope = 0.2;

  // Throws ConfigError on degenerate sizes.
  void validate() const;
  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

struct ConvLayer {
  nk::Tensor weight;  // O x C x kh x kw
  nk::Tensor bias;    // O
  nk::Conv2dOptions options;
};

struct Network {
  std::vector<ConvLayer> layers;

  // Canonical order: layer by layer, weight before bias.
  std::vector<nk::Tensor*> parameters();
  std::vector<const nk::Tensor*> parameters() const;
  std::size_t parameter_count() const;
};

struct OptimizerPlan {
  nk::OptimizerSettings segmentation{nk::OptimizerKind::SgdMomentum, 0.9, 0.9, 0.99, 1e-8, 5e-4};
  nk::OptimizerSettings discriminator{nk::OptimizerKind::Adam, 0.9, 0.9, 0.99, 1e-8, 0.0};
};

// G, C1, C2 and D with one optimizer each. C1 and C2 share an architecture
// but are initialized from different sub-seeds.
struct ModelBundle {
  ArchitectureConfig config;
  std::uint64_t seed = 0;
  Network extractor;
  Network head1;
  Network head2;
  Network discriminator;
  nk::Optimizer opt_extractor;
  nk::Optimizer opt_head1;
  nk::Optimizer opt_head2;
  nk::Optimizer opt_discriminator;

  // G, C1, C2, D in that order.
  std::vector<nk::Tensor*> all_parameters();
};

ModelBundle build(const ArchitectureConfig& config, std::uint64_t seed, const OptimizerPlan& plan = {});

// Binds a tensor as a trainable parameter or as a frozen constant.
nk::Var bind(nk::Graph& g, nk::Tensor& t, bool trainable);

// G: stack of 3x3 convolutions, each followed by leaky-relu. Spatial size preserved.
nk::Var extract(nk::Graph& g, Network& extractor, nk::Var x, bool trainable, double slope);
// C1 / C2: per-pixel linear map to K logits followed by channel softmax.
nk::Var classify(nk::Graph& g, Network& head, nk::Var features, bool trainable);
// D: stride-2 convolutions, leaky-relu between them; the mean of the final
// logit map passes through a sigmoid. Returns a scalar in (0, 1).
nk::Var discriminate(nk::Graph& g, Network& disc, nk::Var features, bool trainable, double slope);

// Frozen variants for inference.
nk::Var extract(nk::Graph& g, const Network& extractor, nk::Var x, double slope);
nk::Var classify(nk::Graph& g, const Network& head, nk::Var features);
nk::Var discriminate(nk::Graph& g, const Network& disc, nk::Var features, double slope);

struct SegOutput {
  nk::Tensor p1;
  nk::Tensor p2;
  nk::Tensor features;
};

SegOutput forward_seg(const ModelBundle& bundle, const nk::Tensor& x);
double forward_domain(const ModelBundle& bundle, const nk::Tensor& x);

nk::Tensor weight_vector(const Network& head);
nk::Var weight_vector(nk::Graph& g, Network& head, bool trainable);

// Per-pixel argmax over axis 0 of a K x H x W tensor; lowest class id wins ties.
nk::Tensor predict_labels(const nk::Tensor& p);

// Header: u32 little-endian byte length followed by a JSON object with the
// architecture, seed and iteration; then every parameter as a CALT tensor in
// canonical order (G, C1, C2, D).
void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle, std::int64_t iteration);
struct Checkpoint {
  ModelBundle bundle;
  std::int64_t iteration = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cali::models
