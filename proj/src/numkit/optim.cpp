#include "cali/numkit/optim.hpp"

#include <cmath>

#include "cali/errors.hpp"

namespace cali::nk {

void Optimizer::step(std::span<Tensor* const> params, double lr) {
  for (const Tensor* p : params)
    if (!p->has_grad()) throw ContractError("optimizer step on a parameter without gradient");

  if (first_.empty()) {
    for (const Tensor* p : params) {
      first_.emplace_back(p->size(), 0.0);
      if (settings_.kind == OptimizerKind::Adam) second_.emplace_back(p->size(), 0.0);
    }
  }
  if (first_.size() != params.size()) throw ContractError("optimizer parameter list changed between steps");
  ++steps_;

  const auto& s = settings_;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    auto w = p.values();
    auto g = p.grad();
    auto& m = first_[k];
    if (m.size() != w.size()) throw ContractError("optimizer buffer shape does not match parameter");
    if (s.kind == OptimizerKind::SgdMomentum) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + s.weight_decay * w[i];
        m[i] = s.momentum * m[i] + gi;
        w[i] -= lr * m[i];
      }
    } else {
      auto& v = second_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + s.weight_decay * w[i];
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
        w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s.epsilon);
      }
    }
    p.clear_grad();
  }
}

double poly_lr(double base_lr, std::int64_t iter, std::int64_t max_iters, double power) {
  if (max_iters <= 0) throw ContractError("poly_lr: max_iters must be positive");
  if (iter < 0 || iter > max_iters) throw ContractError("poly_lr: iter outside [0, max_iters]");
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iters);
  return base_lr * std::pow(frac, power);
}

}  // namespace cali::nk
