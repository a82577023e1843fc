#pragma once

#include <cstddef>
#include <vector>

#include "cali/numkit/graph.hpp"

namespace cali::nk {

// Lower clamp applied to every logarithm argument.
inline constexpr double kLogFloor = 1e-12;

// Elementwise binary ops accept equal shapes, or a single-element operand
// that is broadcast against the other.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var neg(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }

// [M x K] * [K x N] -> [M x N]
Var matmul(Var a, Var b);

Var sum(Var a);
Var mean(Var a);

Var relu(Var a);
Var leaky_relu(Var a, double slope);
// Logistic function. Outputs are clamped into [1e-12, 1 - 1e-12] so that the
// value stays strictly inside (0, 1); the derivative uses the unclamped value.
Var sigmoid(Var a);
// log(max(a, kLogFloor)); zero derivative where the clamp is active.
Var log(Var a);
Var sqrt(Var a);
Var abs(Var a);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 1;
};

// Cross-correlation (the kernel is not flipped) of x[C x H x W] with
// w[O x C x kh x kw] and zero padding, plus an optional bias b[O]:
//   y[o, i, j] = b[o] + sum_{c,u,v} w[o, c, u, v] * x[c, i*s + u - p, j*s + v - p]
// Output is O x H' x W' with H' = (H + 2p - kh) / s + 1.
Var conv2d(Var x, Var w, Conv2dOptions opts = {});
Var conv2d(Var x, Var w, Var b, Conv2dOptions opts = {});

// Softmax over axis 0 of a [K x H x W] tensor, independently at every pixel.
Var softmax_channels(Var logits);

Var reshape(Var a, Shape shape);
// Flattens every operand and concatenates them into one rank-1 tensor.
Var concat(const std::vector<Var>& parts);

// Forward-only helpers.
Tensor softmax_channels(const Tensor& logits);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* b, Conv2dOptions opts = {});
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace cali::nk
