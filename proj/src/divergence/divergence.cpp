#include "cali/divergence/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cali/errors.hpp"
#include "cali/numkit/rng.hpp"
#include "json.hpp"

namespace cali::divergence {

std::size_t SampleSets::dimension() const {
  if (source.empty() || target.empty()) throw ContractError("sample sets must both be non-empty");
  const std::size_t d = source.front().size();
  if (d == 0) throw ContractError("feature vectors must be non-empty");
  for (const auto* set : {&source, &target})
    for (const auto& x : *set)
      if (x.size() != d) throw ContractError("feature vectors have inconsistent lengths");
  return d;
}

HypothesisClass threshold_class(std::span<const double> cuts, std::span<const std::size_t> axes) {
  HypothesisClass h;
  for (auto axis : axes)
    for (double c : cuts)
      for (bool above : {true, false}) h.members.push_back({Threshold{axis, c, above}, std::nullopt});
  return h;
}

HypothesisClass threshold_class(const SampleSets& sets) {
  const std::size_t d = sets.dimension();
  HypothesisClass h;
  for (std::size_t axis = 0; axis < d; ++axis) {
    std::vector<double> v;
    for (const auto* set : {&sets.source, &sets.target})
      for (const auto& x : *set) v.push_back(x[axis]);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    std::vector<double> cuts{v.front() - 1.0};
    for (std::size_t i = 0; i + 1 < v.size(); ++i) cuts.push_back(0.5 * (v[i] + v[i + 1]));
    cuts.push_back(v.back() + 1.0);
    const std::size_t ax[1] = {axis};
    auto part = threshold_class(cuts, ax);
    h.members.insert(h.members.end(), part.members.begin(), part.members.end());
  }
  return h;
}

HypothesisClass symmetric_difference(const HypothesisClass& h) {
  for (const auto& m : h.members)
    if (m.other) throw ContractError("symmetric_difference expects a class of plain thresholds");
  HypothesisClass out;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = i; j < h.size(); ++j) out.members.push_back({h.members[i].first, h.members[j].first});
  return out;
}

HypothesisClass unite(const HypothesisClass& a, const HypothesisClass& b) {
  HypothesisClass out = a;
  out.members.insert(out.members.end(), b.members.begin(), b.members.end());
  return out;
}

namespace {

// Fraction of the set on which pred holds.
template <class Pred>
double rate(const std::vector<FeatureVector>& set, Pred pred) {
  std::size_t n = 0;
  for (const auto& x : set) n += pred(x) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(set.size());
}

std::vector<bool> labeling(const Hypothesis& h, const std::vector<FeatureVector>& points) {
  std::vector<bool> out;
  out.reserve(points.size());
  for (const auto& x : points) out.push_back(h(x));
  return out;
}

}  // namespace

double brute_force_h_divergence(const SampleSets& sets, const HypothesisClass& h) {
  (void)sets.dimension();
  double best = 0.0;
  for (const auto& m : h.members) {
    const double diff = std::fabs(rate(sets.source, m) - rate(sets.target, m));
    best = std::max(best, diff);
  }
  return std::clamp(2.0 * best, 0.0, 2.0);
}

double brute_force_hdh_distance(const SampleSets& sets, const HypothesisClass& h) {
  (void)sets.dimension();
  // Precompute labelings so each pair costs one pass over the samples.
  std::vector<std::vector<bool>> ls, lt;
  for (const auto& m : h.members) {
    ls.push_back(labeling(m, sets.source));
    lt.push_back(labeling(m, sets.target));
  }
  double best = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = i + 1; j < h.size(); ++j) {
      std::size_t ns = 0, nt = 0;
      for (std::size_t k = 0; k < ls[i].size(); ++k) ns += ls[i][k] != ls[j][k];
      for (std::size_t k = 0; k < lt[i].size(); ++k) nt += lt[i][k] != lt[j][k];
      const double diff = std::fabs(static_cast<double>(ns) / static_cast<double>(sets.source.size()) -
                                    static_cast<double>(nt) / static_cast<double>(sets.target.size()));
      best = std::max(best, diff);
    }
  return std::clamp(2.0 * best, 0.0, 2.0);
}

BoundRelation bound_relation_check(const SampleSets& sets, const HypothesisClass& h, const HypothesisClass& h_d) {
  (void)sets.dimension();
  std::vector<FeatureVector> pooled = sets.source;
  pooled.insert(pooled.end(), sets.target.begin(), sets.target.end());

  std::set<std::vector<bool>> realized;
  for (const auto& m : h_d.members) realized.insert(labeling(m, pooled));
  std::vector<std::vector<bool>> base;
  for (const auto& m : h.members) base.push_back(labeling(m, pooled));
  for (std::size_t i = 0; i < base.size(); ++i)
    for (std::size_t j = i; j < base.size(); ++j) {
      std::vector<bool> x(pooled.size());
      for (std::size_t k = 0; k < pooled.size(); ++k) x[k] = base[i][k] != base[j][k];
      if (!realized.count(x)) throw ConfigError("H_D does not contain the symmetric difference of H", "divergence.h_d");
    }

  BoundRelation r;
  r.d_hdh = brute_force_hdh_distance(sets, h);
  r.d_hd = brute_force_h_divergence(sets, h_d);
  r.holds = r.d_hdh <= r.d_hd + 1e-12;
  return r;
}

double estimate_h_divergence(const SampleSets& sets, int train_iters, std::uint64_t seed) {
  const std::size_t d = sets.dimension();
  if (train_iters < 1) throw ContractError("train_iters must be positive");

  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  const double n = static_cast<double>(sets.source.size() + sets.target.size());
  for (const auto* set : {&sets.source, &sets.target})
    for (const auto& x : *set)
      for (std::size_t k = 0; k < d; ++k) mu[k] += x[k] / n;
  for (const auto* set : {&sets.source, &sets.target})
    for (const auto& x : *set)
      for (std::size_t k = 0; k < d; ++k) sd[k] += (x[k] - mu[k]) * (x[k] - mu[k]) / n;
  for (double& s : sd) s = s > 1e-24 ? std::sqrt(s) : 1.0;
  auto standardize = [&](const std::vector<FeatureVector>& set) {
    std::vector<FeatureVector> out = set;
    for (auto& x : out)
      for (std::size_t k = 0; k < d; ++k) x[k] = (x[k] - mu[k]) / sd[k];
    return out;
  };
  const auto src = standardize(sets.source), tgt = standardize(sets.target);

  nk::Rng rng(seed);
  std::vector<double> w(d);
  for (double& v : w) v = rng.uniform(-0.01, 0.01);
  double b = 0.0;
  const double lr = 0.5;
  std::vector<double> gw(d);
  for (int it = 0; it < train_iters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    // label 1 = source, each domain weighted by 1 / m
    for (int dom = 0; dom < 2; ++dom) {
      const auto& set = dom == 0 ? src : tgt;
      const double label = dom == 0 ? 1.0 : 0.0;
      const double wgt = 1.0 / static_cast<double>(set.size());
      for (const auto& x : set) {
        double z = b;
        for (std::size_t k = 0; k < d; ++k) z += w[k] * x[k];
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double r = (p - label) * wgt;
        for (std::size_t k = 0; k < d; ++k) gw[k] += r * x[k];
        gb += r;
      }
    }
    for (std::size_t k = 0; k < d; ++k) w[k] -= lr * gw[k];
    b -= lr * gb;
  }

  auto predicts_source = [&](const FeatureVector& x) {
    double z = b;
    for (std::size_t k = 0; k < d; ++k) z += w[k] * x[k];
    return z > 0.0;
  };
  const double err = rate(src, [&](const auto& x) { return !predicts_source(x); }) +
                     rate(tgt, [&](const auto& x) { return predicts_source(x); });
  return std::clamp(2.0 * (1.0 - std::min(err, 2.0 - err)), 0.0, 2.0);
}

SampleSets pixel_samples(std::span<const nk::Tensor> source, std::span<const nk::Tensor> target,
                         std::size_t per_image, std::uint64_t seed) {
  nk::Rng rng(seed);
  auto draw = [&](std::span<const nk::Tensor> images) {
    std::vector<FeatureVector> out;
    for (const auto& img : images) {
      if (img.rank() != 3) throw ShapeError("pixel_samples expects C x H x W tensors");
      const std::size_t c = img.dim(0), hw = img.dim(1) * img.dim(2);
      for (std::size_t s = 0; s < per_image; ++s) {
        const std::size_t i = rng.below(hw);
        FeatureVector v(c);
        for (std::size_t k = 0; k < c; ++k) v[k] = img[k * hw + i];
        out.push_back(std::move(v));
      }
    }
    return out;
  };
  SampleSets sets;
  sets.source = draw(source);
  sets.target = draw(target);
  return sets;
}

std::string DivergenceReport::to_json() const {
  nlohmann::ordered_json j{{"estimate", estimate},
                           {"brute_force_h", brute_force_h},
                           {"brute_force_hdh", brute_force_hdh},
                           {"holds", holds}};
  return j.dump(2);
}

}  // namespace cali::divergence
