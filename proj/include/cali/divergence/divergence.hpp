#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cali/numkit/tensor.hpp"

namespace cali::divergence {

using FeatureVector = std::vector<double>;

struct SampleSets {
  std::vector<FeatureVector> source;
  std::vector<FeatureVector> target;

  // Throws ContractError when a set is empty or feature lengths differ.
  std::size_t dimension() const;
};

// h(x) = 1 iff (x[axis] > cut) == above.
struct Threshold {
  std::size_t axis = 0;
  double cut = 0.0;
  bool above = true;

  bool operator()(std::span<const double> x) const { return (x[axis] > cut) == above; }
};

// A threshold, or the XOR of two thresholds when `other` is set.
struct Hypothesis {
  Threshold first;
  std::optional<Threshold> other;

  bool operator()(std::span<const double> x) const { return other ? (first(x) != (*other)(x)) : first(x); }
};

struct HypothesisClass {
  std::vector<Hypothesis> members;

  std::size_t size() const noexcept { return members.size(); }
};

// Axis thresholds at the given cut points on every axis in `axes`, in both
// orientations. Closed under complement.
HypothesisClass threshold_class(std::span<const double> cuts, std::span<const std::size_t> axes);
// Cuts at midpoints between consecutive distinct values of the pooled samples,
// plus one below the minimum and one above the maximum, on every axis.
HypothesisClass threshold_class(const SampleSets& sets);
// { h xor h' : h, h' in H }, including the diagonal pairs.
HypothesisClass symmetric_difference(const HypothesisClass& h);
HypothesisClass unite(const HypothesisClass& a, const HypothesisClass& b);

// 2 * max over H of |P_s[h = 1] - P_t[h = 1]| on the empirical measures.
double brute_force_h_divergence(const SampleSets& sets, const HypothesisClass& h);
// 2 * max over pairs of |P_s[h != h'] - P_t[h != h']|.
double brute_force_hdh_distance(const SampleSets& sets, const HypothesisClass& h);

struct BoundRelation {
  double d_hdh = 0.0;
  double d_hd = 0.0;
  bool holds = false;
};

// Compares d_{H delta H} against d_{H_D}. The premise that H_D contains every
// h xor h' is checked on the pooled sample points (labelings must be
// realized by some member of H_D); a violation throws ConfigError.
BoundRelation bound_relation_check(const SampleSets& sets, const HypothesisClass& h, const HypothesisClass& h_d);

// Trains a logistic domain classifier (features z-scored on the pooled sample,
// full-batch gradient descent on the class-balanced cross-entropy) and
// returns 2 * (1 - err), err being the smaller of the classifier's balanced
// error sum and that of its complement. Clipped to [0, 2].
double estimate_h_divergence(const SampleSets& sets, int train_iters = 500, std::uint64_t seed = 0);

// Samples `per_image` random pixel feature vectors (one entry per channel)
// from every C x H x W tensor of each domain.
SampleSets pixel_samples(std::span<const nk::Tensor> source, std::span<const nk::Tensor> target,
                         std::size_t per_image, std::uint64_t seed);

struct DivergenceReport {
  double estimate = 0.0;
  double brute_force_h = 0.0;
  double brute_force_hdh = 0.0;
  bool holds = false;

  std::string to_json() const;
};

}  // namespace cali::divergence
