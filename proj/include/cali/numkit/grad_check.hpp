#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "cali/numkit/graph.hpp"

namespace cali::nk {

// Builds a scalar loss on the given graph. Parameters under test must be
// bound with Graph::parameter so that backward reaches them.
using LossBuilder = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double eps = 1e-6;
  // Entries checked per parameter tensor; all entries when the tensor is smaller.
  std::size_t samples_per_tensor = 16;
  std::uint64_t seed = 0;
};

// Max over sampled entries of |analytic - central difference| / max(1, |analytic|).
// Parameter values are restored and gradients cleared on return.
double grad_check(std::span<Tensor* const> params, const LossBuilder& loss, GradCheckOptions opts = {});

}  // namespace cali::nk
