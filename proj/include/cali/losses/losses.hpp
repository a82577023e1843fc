#pragma once

#include <optional>
#include <span>

#include "cali/domain.hpp"
#include "cali/numkit/graph.hpp"

namespace cali::losses {

// One image (batch size 1). `y` is a one-hot K x H x W label, present for
// source and mixed batches only.
struct Batch {
  nk::Tensor x;
  std::optional<nk::Tensor> y;
  Domain domain = Domain::Source;
};

// Throws ContractError unless every pixel of y has exactly one entry equal to 1
// and all other entries 0.
void check_one_hot(const nk::Tensor& y);

// -(1/2) * mean over pixels of sum_k y * log(p1 * p2), i.e. the average of the
// two per-head cross-entropies.
nk::Var seg_loss(nk::Var p1, nk::Var p2, const nk::Tensor& y);

// V1 = log d_src + log(1 - d_tgt) = -(CE_s + CE_t). A perfect discriminator
// drives V1 to its supremum 0.
nk::Var domain_loss(nk::Var d_src, nk::Var d_tgt);
double domain_loss(double d_src, double d_tgt);

// (1/K) * |p - q|_1
double discrepancy(std::span<const double> p, std::span<const double> q);

// Mean over pixels of discrepancy(p1, p2) for K x H x W distributions.
nk::Var class_alignment_loss(nk::Var p1, nk::Var p2);
double class_alignment_loss(const nk::Tensor& p1, const nk::Tensor& p2);

// Cosine similarity w1 . w2 / (|w1| |w2|).
nk::Var weight_regularization(nk::Var w1, nk::Var w2);
double weight_regularization(const nk::Tensor& w1, const nk::Tensor& w2);

// Mean per-pixel cross-entropy of p against a one-hot y.
nk::Var mixed_loss(nk::Var p, const nk::Tensor& y);

// Value-only conveniences.
double seg_loss(const nk::Tensor& p1, const nk::Tensor& p2, const nk::Tensor& y);
double mixed_loss(const nk::Tensor& p, const nk::Tensor& y);

}  // namespace cali::losses
