#include "cali/models/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "cali/errors.hpp"
#include "cali/numkit/rng.hpp"
#include "cali/numkit/tensor_io.hpp"
#include "json.hpp"

namespace cali::models {

using nk::Graph;
using nk::Tensor;
using nk::Var;

void ArchitectureConfig::validate() const {
  if (in_channels == 0) throw ConfigError("must be positive", "arch.in_channels");
  if (num_classes < 2) throw ConfigError("need at least two classes", "arch.num_classes");
  if (feature_channels == 0) throw ConfigError("must be positive", "arch.feature_channels");
  if (extractor_depth == 0) throw ConfigError("must be positive", "arch.extractor_depth");
  if (discriminator_channels.empty()) throw ConfigError("must not be empty", "arch.discriminator_channels");
  for (auto c : discriminator_channels)
    if (c == 0) throw ConfigError("channel counts must be positive", "arch.discriminator_channels");
  if (discriminator_channels.back() != 1)
    throw ConfigError("final discriminator layer must have one channel", "arch.discriminator_channels");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("must lie in [0, 1)", "arch.leaky_slope");
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<Tensor*> ModelBundle::all_parameters() {
  std::vector<Tensor*> out;
  for (Network* n : {&extractor, &head1, &head2, &discriminator}) {
    auto p = n->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

namespace {

// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)); zero bias.
ConvLayer make_layer(std::size_t out_c, std::size_t in_c, std::size_t k, nk::Conv2dOptions opts, nk::Rng& rng) {
  ConvLayer l{Tensor({out_c, in_c, k, k}), Tensor({out_c}, 0.0), opts};
  const double a = std::sqrt(6.0 / static_cast<double>((in_c + out_c) * k * k));
  for (double& v : l.weight.values()) v = rng.uniform(-a, a);
  return l;
}

Network make_extractor(const ArchitectureConfig& c, nk::Rng& rng) {
  Network n;
  std::size_t in = c.in_channels;
  for (std::size_t i = 0; i < c.extractor_depth; ++i) {
    n.layers.push_back(make_layer(c.feature_channels, in, 3, {1, 1}, rng));
    in = c.feature_channels;
  }
  return n;
}

Network make_head(const ArchitectureConfig& c, nk::Rng& rng) {
  Network n;
  n.layers.push_back(make_layer(c.num_classes, c.feature_channels, 1, {1, 0}, rng));
  return n;
}

Network make_discriminator(const ArchitectureConfig& c, nk::Rng& rng) {
  Network n;
  std::size_t in = c.feature_channels;
  for (auto out : c.discriminator_channels) {
    n.layers.push_back(make_layer(out, in, 4, {2, 1}, rng));
    in = out;
  }
  return n;
}

template <class Net, class Binder>
Var extract_impl(Net& net, Var x, double slope, Binder bind_fn) {
  Var h = x;
  for (auto& l : net.layers) h = nk::leaky_relu(nk::conv2d(h, bind_fn(l.weight), bind_fn(l.bias), l.options), slope);
  return h;
}

template <class Net, class Binder>
Var classify_impl(Net& net, Var f, Binder bind_fn) {
  Var h = f;
  for (auto& l : net.layers) h = nk::conv2d(h, bind_fn(l.weight), bind_fn(l.bias), l.options);
  return nk::softmax_channels(h);
}

template <class Net, class Binder>
Var discriminate_impl(Net& net, Var f, double slope, Binder bind_fn) {
  Var h = f;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    h = nk::conv2d(h, bind_fn(l.weight), bind_fn(l.bias), l.options);
    if (i + 1 < net.layers.size()) h = nk::leaky_relu(h, slope);
  }
  return nk::sigmoid(nk::mean(h));
}

auto frozen(Graph& g) {
  return [&g](const Tensor& t) { return g.constant(t.detached()); };
}

auto binder(Graph& g, bool trainable) {
  return [&g, trainable](Tensor& t) { return bind(g, t, trainable); };
}

}  // namespace

ModelBundle build(const ArchitectureConfig& config, std::uint64_t seed, const OptimizerPlan& plan) {
  config.validate();
  ModelBundle b;
  b.config = config;
  b.seed = seed;
  nk::Rng rg(nk::derive_seed(seed, 1)), r1(nk::derive_seed(seed, 2)), r2(nk::derive_seed(seed, 3)),
      rd(nk::derive_seed(seed, 4));
  b.extractor = make_extractor(config, rg);
  b.head1 = make_head(config, r1);
  b.head2 = make_head(config, r2);
  b.discriminator = make_discriminator(config, rd);
  b.opt_extractor = nk::Optimizer(plan.segmentation);
  b.opt_head1 = nk::Optimizer(plan.segmentation);
  b.opt_head2 = nk::Optimizer(plan.segmentation);
  b.opt_discriminator = nk::Optimizer(plan.discriminator);
  return b;
}

Var bind(Graph& g, Tensor& t, bool trainable) {
  return trainable ? g.parameter(t) : g.constant(t.detached());
}

Var extract(Graph& g, Network& extractor, Var x, bool trainable, double slope) {
  return extract_impl(extractor, x, slope, binder(g, trainable));
}
Var classify(Graph& g, Network& head, Var features, bool trainable) {
  return classify_impl(head, features, binder(g, trainable));
}
Var discriminate(Graph& g, Network& disc, Var features, bool trainable, double slope) {
  return discriminate_impl(disc, features, slope, binder(g, trainable));
}
Var extract(Graph& g, const Network& extractor, Var x, double slope) {
  return extract_impl(extractor, x, slope, frozen(g));
}
Var classify(Graph& g, const Network& head, Var features) { return classify_impl(head, features, frozen(g)); }
Var discriminate(Graph& g, const Network& disc, Var features, double slope) {
  return discriminate_impl(disc, features, slope, frozen(g));
}

namespace {
void check_input(const ModelBundle& b, const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) != b.config.in_channels)
    throw ShapeError("model input must be " + std::to_string(b.config.in_channels) + " x H x W, got " +
                     nk::shape_string(x.shape()));
}
}  // namespace

SegOutput forward_seg(const ModelBundle& bundle, const Tensor& x) {
  check_input(bundle, x);
  Graph g;
  Var f = extract(g, bundle.extractor, g.constant(x), bundle.config.leaky_slope);
  Var p1 = classify(g, bundle.head1, f);
  Var p2 = classify(g, bundle.head2, f);
  return {p1.value(), p2.value(), f.value()};
}

double forward_domain(const ModelBundle& bundle, const Tensor& x) {
  check_input(bundle, x);
  Graph g;
  Var f = extract(g, bundle.extractor, g.constant(x), bundle.config.leaky_slope);
  return discriminate(g, bundle.discriminator, f, bundle.config.leaky_slope).value().item();
}

Tensor weight_vector(const Network& head) {
  std::vector<double> v;
  for (const Tensor* p : head.parameters()) v.insert(v.end(), p->values().begin(), p->values().end());
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Var weight_vector(Graph& g, Network& head, bool trainable) {
  std::vector<Var> parts;
  for (Tensor* p : head.parameters()) parts.push_back(bind(g, *p, trainable));
  return nk::concat(parts);
}

Tensor predict_labels(const Tensor& p) {
  if (p.rank() != 3) throw ShapeError("predict_labels expects K x H x W, got " + nk::shape_string(p.shape()));
  const std::size_t k = p.dim(0), hw = p.dim(1) * p.dim(2);
  Tensor out({p.dim(1), p.dim(2)});
  for (std::size_t i = 0; i < hw; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (p[c * hw + i] > p[best * hw + i]) best = c;
    out[i] = static_cast<double>(best);
  }
  return out;
}

namespace {

nlohmann::json arch_to_json(const ArchitectureConfig& c) {
  return {{"in_channels", c.in_channels},
          {"num_classes", c.num_classes},
          {"feature_channels", c.feature_channels},
          {"extractor_depth", c.extractor_depth},
          {"discriminator_channels", c.discriminator_channels},
          {"leaky_slope", c.leaky_slope}};
}

ArchitectureConfig arch_from_json(const nlohmann::json& j) {
  ArchitectureConfig c;
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.feature_channels = j.at("feature_channels").get<std::size_t>();
  c.extractor_depth = j.at("extractor_depth").get<std::size_t>();
  c.discriminator_channels = j.at("discriminator_channels").get<std::vector<std::size_t>>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle, std::int64_t iteration) {
  const nlohmann::json header{{"format", "cali-checkpoint"},
                              {"architecture", arch_to_json(bundle.config)},
                              {"seed", bundle.seed},
                              {"iteration", iteration}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xFF));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Network* n : {&bundle.extractor, &bundle.head1, &bundle.head2, &bundle.discriminator})
    for (const Tensor* p : n->parameters()) nk::write_tensor(out, *p);
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  unsigned char lenb[4];
  in.read(reinterpret_cast<char*>(lenb), 4);
  if (in.gcount() != 4) throw FormatError("truncated checkpoint header", 0);
  const std::uint32_t len = lenb[0] | (lenb[1] << 8) | (lenb[2] << 16) | (static_cast<std::uint32_t>(lenb[3]) << 24);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (static_cast<std::uint32_t>(in.gcount()) != len) throw FormatError("truncated checkpoint header", 4);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), 4);
  }
  Checkpoint ck;
  try {
    ck.bundle = build(arch_from_json(header.at("architecture")), header.at("seed").get<std::uint64_t>());
    ck.iteration = header.at("iteration").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), 4);
  }
  std::uint64_t offset = 4 + len;
  for (Tensor* p : ck.bundle.all_parameters()) {
    Tensor t;
    try {
      t = nk::read_tensor(in);
    } catch (const FormatError& e) {
      throw FormatError(std::string("checkpoint tensor: ") + e.what(), offset + e.offset());
    }
    if (t.shape() != p->shape()) throw FormatError("checkpoint tensor shape mismatch", offset);
    offset += 10 + 4 * t.rank() + 8 * t.size();
    *p = std::move(t);
  }
  return ck;
}

}  // namespace cali::models
