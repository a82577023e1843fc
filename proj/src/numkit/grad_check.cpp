#include "cali/numkit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cali/errors.hpp"
#include "cali/numkit/rng.hpp"

namespace cali::nk {

namespace {
double evaluate(const LossBuilder& loss) {
  Graph g;
  return loss(g).value().item();
}
}  // namespace

double grad_check(std::span<Tensor* const> params, const LossBuilder& loss, GradCheckOptions opts) {
  if (!(opts.eps >= 1e-7 && opts.eps <= 1e-3)) throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");

  for (Tensor* p : params) p->clear_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params) {
    if (p->has_grad()) {
      analytic.emplace_back(p->grad().begin(), p->grad().end());
    } else {
      analytic.emplace_back(p->size(), 0.0);
    }
    p->clear_grad();
  }

  Rng rng(opts.seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > opts.samples_per_tensor) {
      for (std::size_t i = 0; i < opts.samples_per_tensor; ++i)
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      idx.resize(opts.samples_per_tensor);
    }
    for (std::size_t i : idx) {
      const double saved = p[i];
      p[i] = saved + opts.eps;
      const double up = evaluate(loss);
      p[i] = saved - opts.eps;
      const double down = evaluate(loss);
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[k][i];
      worst = std::max(worst, std::fabs(a - numeric) / std::max(1.0, std::fabs(a)));
    }
  }
  return worst;
}

}  // namespace cali::nk
