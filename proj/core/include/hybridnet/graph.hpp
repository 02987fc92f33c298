#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "hybridnet/param_store.hpp"
#include "hybridnet/tensor.hpp"

namespace hybridnet {

class Graph;

/// Handle to a value recorded on a Graph. Cheap to copy; only valid while the
/// owning graph is alive.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Every op appends one node; backward() walks nodes in
/// reverse creation order, so gradient accumulation order is fixed.
///
/// Parameters are bound from a ParamStore without copying. Gradients of
/// parameter nodes are added into the caller's GradBuffer at the end of
/// backward(). A graph with gradients disabled records values only.
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::uint32_t self)>;

  Graph() = default;
  Graph(const ParamStore& store, GradBuffer* grads, bool grad_enabled = true);

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf without gradient.
  Var constant(Tensor value);
  /// Leaf that accumulates a gradient, readable via grad() after backward().
  Var input(Tensor value);
  /// Parameter leaf; repeated calls with the same id return the same node.
  Var param(ParamId id);

  /// Appends an op result. `fn` is dropped when no parent needs a gradient.
  Var emit(Tensor value, std::initializer_list<Var> parents, Backward fn);
  Var emit(Tensor value, const std::vector<Var>& parents, Backward fn);

  const Tensor& value(std::uint32_t id) const;
  const Tensor& value(Var v) const { return value(v.id); }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }

  /// Gradient slot of a node, zero-initialised on first access.
  Tensor& grad(std::uint32_t id);
  /// Gradient of a node after backward(), or nullptr when none flowed into it.
  const Tensor* grad_of(Var v) const;

  /// Seeds d(loss)/d(loss) = seed and propagates. `loss` must hold one element.
  void backward(Var loss, double seed = 1.0);

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  const ParamStore* store() const noexcept { return store_; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool needs_grad = false;
    bool grad_live = false;
    std::int64_t param = -1;
    Backward backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  const ParamStore* store_ = nullptr;
  GradBuffer* grads_ = nullptr;
  bool grad_enabled_ = true;
  std::vector<std::int64_t> param_nodes_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

}  // namespace hybridnet
