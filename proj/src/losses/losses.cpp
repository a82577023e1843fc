#include "cali/losses/losses.hpp"

#include <algorithm>
#include <cmath>

#include "cali/errors.hpp"
#include "cali/numkit/ops.hpp"

namespace cali::losses {

using nk::Graph;
using nk::Tensor;
using nk::Var;

void check_one_hot(const Tensor& y) {
  if (y.rank() != 3) throw ShapeError("label must be K x H x W, got " + nk::shape_string(y.shape()));
  const std::size_t k = y.dim(0), hw = y.dim(1) * y.dim(2);
  for (std::size_t i = 0; i < hw; ++i) {
    int ones = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = y[c * hw + i];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw ContractError("label is not one-hot at pixel " + std::to_string(i));
      }
    }
    if (ones != 1) throw ContractError("label is not one-hot at pixel " + std::to_string(i));
  }
}

namespace {

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.rank() != 3)
    throw ShapeError(std::string(what) + ": expected matching K x H x W tensors, got " + nk::shape_string(a.shape()) +
                     " and " + nk::shape_string(b.shape()));
}

double pixels(const Tensor& t) { return static_cast<double>(t.dim(1) * t.dim(2)); }

}  // namespace

Var seg_loss(Var p1, Var p2, const Tensor& y) {
  check_pair(p1.value(), p2.value(), "seg_loss");
  check_pair(p1.value(), y, "seg_loss");
  check_one_hot(y);
  Graph& g = *p1.graph;
  Var yv = g.constant(y);
  Var ll = nk::sum(nk::mul(yv, nk::log(p1) + nk::log(p2)));
  return nk::scale(ll, -0.5 / pixels(y));
}

Var domain_loss(Var d_src, Var d_tgt) {
  if (d_src.value().size() != 1 || d_tgt.value().size() != 1) throw ShapeError("domain_loss expects scalars");
  return nk::log(d_src) + nk::log(nk::add_scalar(nk::neg(d_tgt), 1.0));
}

double domain_loss(double d_src, double d_tgt) {
  return std::log(std::max(d_src, nk::kLogFloor)) + std::log(std::max(1.0 - d_tgt, nk::kLogFloor));
}

double discrepancy(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw ShapeError("discrepancy: distributions must have equal nonzero length");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(p[i] - q[i]);
  return acc / static_cast<double>(p.size());
}

Var class_alignment_loss(Var p1, Var p2) {
  check_pair(p1.value(), p2.value(), "class_alignment_loss");
  // mean over pixels of (1/K) sum_k |p1 - p2| is the mean over all K*H*W entries
  return nk::mean(nk::abs(p1 - p2));
}

double class_alignment_loss(const Tensor& p1, const Tensor& p2) {
  check_pair(p1, p2, "class_alignment_loss");
  const std::size_t k = p1.dim(0), hw = p1.dim(1) * p1.dim(2);
  std::vector<double> a(k), b(k);
  double acc = 0.0;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      a[c] = p1[c * hw + i];
      b[c] = p2[c * hw + i];
    }
    acc += discrepancy(a, b);
  }
  return acc / static_cast<double>(hw);
}

namespace {
void check_nonzero(const Tensor& w) {
  for (double v : w.values())
    if (v != 0.0) return;
  throw ContractError("weight_regularization: zero weight vector");
}
}  // namespace

Var weight_regularization(Var w1, Var w2) {
  if (w1.value().size() != w2.value().size()) throw ShapeError("weight_regularization: length mismatch");
  check_nonzero(w1.value());
  check_nonzero(w2.value());
  Var dot = nk::sum(w1 * w2);
  Var n1 = nk::sqrt(nk::sum(w1 * w1));
  Var n2 = nk::sqrt(nk::sum(w2 * w2));
  Var cos = dot / (n1 * n2);
  // Rounding can push parallel vectors a few ulps past 1; the value is clamped
  // and the gradient passes through unchanged.
  const double c = cos.value().item();
  if (c <= 1.0 && c >= -1.0) return cos;
  Graph& g = *w1.graph;
  return g.record(Tensor::scalar(std::clamp(c, -1.0, 1.0)), {cos.id}, [src = cos.id](Graph& gr, std::size_t self) {
    if (gr.requires_grad(src)) gr.grad_buffer(src)[0] += gr.grad_buffer(self)[0];
  });
}

double weight_regularization(const Tensor& w1, const Tensor& w2) {
  Graph g;
  return weight_regularization(g.constant(w1), g.constant(w2)).value().item();
}

Var mixed_loss(Var p, const Tensor& y) {
  if (p.value().shape() != y.shape())
    throw ShapeError("mixed_loss: prediction " + nk::shape_string(p.value().shape()) + " vs label " +
                     nk::shape_string(y.shape()));
  check_one_hot(y);
  Graph& g = *p.graph;
  return nk::scale(nk::sum(nk::mul(g.constant(y), nk::log(p))), -1.0 / pixels(y));
}

double seg_loss(const Tensor& p1, const Tensor& p2, const Tensor& y) {
  Graph g;
  return seg_loss(g.constant(p1), g.constant(p2), y).value().item();
}

double mixed_loss(const Tensor& p, const Tensor& y) {
  Graph g;
  return mixed_loss(g.constant(p), y).value().item();
}

}  // namespace cali::losses
