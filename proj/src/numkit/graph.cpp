#include "cali/numkit/graph.hpp"

#include <algorithm>

#include "cali/errors.hpp"

namespace cali::nk {

const Tensor& Var::value() const {
  if (graph == nullptr) throw ContractError("unbound variable");
  return graph->value(id);
}

Var Graph::constant(Tensor value) {
  if (differentiated_) throw ContractError("graph already differentiated; reset() before recording");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor& param) {
  if (differentiated_) throw ContractError("graph already differentiated; reset() before recording");
  Node n;
  n.value = param.detached();
  n.param = &param;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  if (differentiated_) throw ContractError("graph already differentiated; reset() before recording");
  const std::size_t id = nodes_.size();
  bool needs = false;
  for (auto p : parents) {
    if (p >= id) throw ContractError("graph parent index must precede its child");
    needs = needs || nodes_[p].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, id};
}

std::vector<double>& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::span<const double> Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() != n.value.size()) throw ContractError("node has no gradient");
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("loss belongs to a different graph");
  if (differentiated_)
    throw ContractError("backward already ran on this graph; gradients would accumulate silently");
  if (nodes_[loss.id].value.size() != 1) throw ContractError("backward requires a scalar loss");
  differentiated_ = true;

  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      if (!n.param->has_grad()) n.param->zero_grad();
      auto g = n.param->grad();
      std::transform(g.begin(), g.end(), n.grad.begin(), g.begin(), std::plus<>());
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

void Graph::reset() {
  nodes_.clear();
  differentiated_ = false;
}

}  // namespace cali::nk
