#include <cmath>
#include <filesystem>

#include "cali/errors.hpp"
#include "cali/losses/losses.hpp"
#include "cali/models/models.hpp"
#include "cali/numkit/ops.hpp"
#include "cali/numkit/rng.hpp"
#include "doctest.h"

using namespace cali;
using namespace cali::models;
using nk::Tensor;

namespace {

Tensor random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  nk::Rng rng(seed);
  Tensor t({c, h, w});
  for (double& v : t.values()) v = rng.uniform(-1, 1);
  return t;
}

bool same_network(const Network& a, const Network& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(*pa[i] == *pb[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("build is deterministic and separates the heads") {
  ArchitectureConfig cfg;
  ModelBundle a = build(cfg, 17), b = build(cfg, 17), c = build(cfg, 18);
  CHECK(same_network(a.extractor, b.extractor));
  CHECK(same_network(a.head1, b.head1));
  CHECK(same_network(a.head2, b.head2));
  CHECK(same_network(a.discriminator, b.discriminator));
  CHECK_FALSE(same_network(a.extractor, c.extractor));
  CHECK_FALSE(same_network(a.head1, a.head2));

  const double cosine = losses::weight_regularization(weight_vector(a.head1), weight_vector(a.head2));
  CHECK(cosine > -1.0);
  CHECK(cosine < 1.0);
}

TEST_CASE("invalid architecture is rejected") {
  ArchitectureConfig cfg;
  cfg.num_classes = 1;
  CHECK_THROWS_AS(build(cfg, 0), ConfigError);
  cfg = {};
  cfg.feature_channels = 0;
  CHECK_THROWS_AS(build(cfg, 0), ConfigError);
  cfg = {};
  cfg.discriminator_channels = {8, 4};
  CHECK_THROWS_AS(build(cfg, 0), ConfigError);
}

TEST_CASE("forward_seg shapes and distributions") {
  ArchitectureConfig cfg;
  cfg.num_classes = 2;
  ModelBundle m = build(cfg, 3);
  const Tensor x = random_image(3, 8, 8, 1);
  const SegOutput out = forward_seg(m, x);
  CHECK(out.p1.shape() == nk::Shape{2, 8, 8});
  CHECK(out.p2.shape() == nk::Shape{2, 8, 8});
  CHECK(out.features.shape() == nk::Shape{16, 8, 8});
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(std::fabs(out.p1[i] + out.p1[64 + i] - 1.0) < 1e-12);
    CHECK(std::fabs(out.p2[i] + out.p2[64 + i] - 1.0) < 1e-12);
  }
  const SegOutput again = forward_seg(m, x);
  CHECK(again.p1 == out.p1);
  CHECK(again.p2 == out.p2);
  Tensor copy = x;
  CHECK(forward_seg(m, copy).p1 == out.p1);
  CHECK_THROWS_AS(forward_seg(m, random_image(2, 8, 8, 1)), ShapeError);
}

TEST_CASE("shared feature feeds both heads and the discriminator") {
  ModelBundle m = build({}, 9);
  const Tensor x = random_image(3, 16, 16, 4);
  nk::Graph g;
  nk::Var f = extract(g, m.extractor, g.constant(x), 0.2);
  nk::Var p1 = classify(g, m.head1, f);
  nk::Var d = discriminate(g, m.discriminator, f, 0.2);
  const SegOutput out = forward_seg(m, x);
  CHECK(f.value() == out.features);
  CHECK(p1.value() == out.p1);
  CHECK(d.value().item() == forward_domain(m, x));
}

TEST_CASE("forward_domain stays inside (0,1)") {
  ModelBundle m = build({}, 5);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const double d = forward_domain(m, random_image(3, 16, 16, s));
    CHECK(d > 0.0);
    CHECK(d < 1.0);
    CHECK(d == forward_domain(m, random_image(3, 16, 16, s)));
  }
  // saturated input still yields a value strictly inside the interval
  Tensor huge({3, 16, 16}, 1e6);
  const double d = forward_domain(m, huge);
  CHECK(d > 0.0);
  CHECK(d < 1.0);
}

TEST_CASE("discriminator learns separable domains on fixed features") {
  ModelBundle m = build({}, 12);
  std::vector<nk::Tensor*> dparams = m.discriminator.parameters();
  auto src = [](std::uint64_t s) {
    Tensor t = random_image(3, 16, 16, s);
    for (std::size_t i = 0; i < 256; ++i) t[i] += 1.5;
    return t;
  };
  auto tgt = [](std::uint64_t s) {
    Tensor t = random_image(3, 16, 16, 1000 + s);
    for (std::size_t i = 0; i < 256; ++i) t[i] -= 1.5;
    return t;
  };
  for (int it = 0; it < 300; ++it) {
    nk::Graph g;
    nk::Var fs = extract(g, m.extractor, g.constant(src(it % 8)), false, 0.2);
    nk::Var ft = extract(g, m.extractor, g.constant(tgt(it % 8)), false, 0.2);
    nk::Var ds = discriminate(g, m.discriminator, fs, true, 0.2);
    nk::Var dt = discriminate(g, m.discriminator, ft, true, 0.2);
    g.backward(nk::neg(losses::domain_loss(ds, dt)));
    m.opt_discriminator.step(dparams, 1e-3);
  }
  for (std::uint64_t s = 20; s < 25; ++s) {
    CHECK(forward_domain(m, src(s)) > 0.9);
    CHECK(forward_domain(m, tgt(s)) < 0.1);
  }
}

TEST_CASE("weight_vector flattens head parameters") {
  ArchitectureConfig cfg;
  cfg.num_classes = 2;
  cfg.feature_channels = 4;
  ModelBundle m = build(cfg, 1);
  const Tensor w = weight_vector(m.head1);
  CHECK(w.shape() == nk::Shape{10});
  CHECK(w == weight_vector(m.head1));
  CHECK(w[0] == m.head1.layers[0].weight[0]);
  CHECK(w[9] == m.head1.layers[0].bias[1]);
  m.head2 = m.head1;
  CHECK(losses::weight_regularization(weight_vector(m.head1), weight_vector(m.head2)) == doctest::Approx(1.0));
}

TEST_CASE("predict_labels") {
  Tensor onehot({3, 1, 2}, std::vector<double>{0, 0, 0, 1, 1, 0});
  const Tensor l = predict_labels(onehot);
  CHECK(l[0] == 2);
  CHECK(l[1] == 1);
  CHECK(predict_labels(Tensor({3, 2, 2}, 1.0 / 3)) == Tensor({2, 2}, 0.0));
  CHECK(predict_labels(Tensor({3, 1, 1}, std::vector<double>{0.2, 0.5, 0.3}))[0] == 1);

  const Tensor logits = random_image(5, 4, 4, 77);
  CHECK(predict_labels(logits) == predict_labels(nk::softmax_channels(logits)));
}

TEST_CASE("checkpoint round trip") {
  ModelBundle m = build({}, 31);
  const auto path = std::filesystem::temp_directory_path() / "cali_ckpt_test.bin";
  save_checkpoint(path, m, 1234);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.iteration == 1234);
  CHECK(ck.bundle.config == m.config);
  CHECK(ck.bundle.seed == 31);
  auto a = m.all_parameters(), b = ck.bundle.all_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}
