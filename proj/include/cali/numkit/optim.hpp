#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cali/numkit/tensor.hpp"

namespace cali::nk {

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

// Update rules, with g the gradient plus weight_decay * w:
//   sgd-momentum:  v <- momentum * v + g;  w <- w - lr * v
//   adam:          m <- b1 m + (1 - b1) g;  s <- b2 s + (1 - b2) g^2
//                  w <- w - lr * (m / (1 - b1^t)) / (sqrt(s / (1 - b2^t)) + eps)
// Buffers are bound to parameters by position on the first step; every later
// step must pass the same parameter list. Gradients are cleared after a step.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerSettings settings) : settings_(settings) {}

  void step(std::span<Tensor* const> params, double lr);

  const OptimizerSettings& settings() const noexcept { return settings_; }
  std::int64_t steps() const noexcept { return steps_; }

 private:
  OptimizerSettings settings_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::int64_t steps_ = 0;
};

// base_lr * (1 - iter / max_iters)^power
double poly_lr(double base_lr, std::int64_t iter, std::int64_t max_iters, double power = 0.9);

}  // namespace cali::nk
