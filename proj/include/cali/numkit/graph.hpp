#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cali/numkit/tensor.hpp"

namespace cali::nk {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives
// and has not been reset.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Append-only tape for reverse-mode differentiation. Parents always precede
// their children, so backward is a single reverse sweep. A graph may be
// differentiated once; reset() is required before it can be reused.
class Graph {
 public:
  // Receives the node's own gradient and pushes contributions into parents.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf bound to an external tensor; backward accumulates into `param.grad()`.
  // The tensor must outlive the backward call and not be modified meanwhile.
  Var parameter(Tensor& param);

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, allocated on first access.
  std::vector<double>& grad_buffer(std::size_t id);
  std::span<const double> grad(Var v) const;

  // Populates d(loss)/d(node) for every node and accumulates parameter gradients.
  void backward(Var loss);
  void reset();

  std::size_t size() const noexcept { return nodes_.size(); }
  bool differentiated() const noexcept { return differentiated_; }
  std::span<const std::size_t> parents(std::size_t id) const { return nodes_[id].parents; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool differentiated_ = false;
};

}  // namespace cali::nk
