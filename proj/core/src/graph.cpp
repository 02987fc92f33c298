#include "hybridnet/graph.hpp"

#include "hybridnet/error.hpp"

namespace hybridnet {

Graph::Graph(const ParamStore& store, GradBuffer* grads, bool grad_enabled)
    : store_(&store), grads_(grads), grad_enabled_(grad_enabled), param_nodes_(store.size(), -1) {
  if (grads_ && grads_->size() != store.size()) throw DimensionError("grad buffer does not match parameter store");
}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = grad_enabled_;
  return push(std::move(n));
}

Var Graph::param(ParamId id) {
  if (!store_) throw ConfigError("graph has no parameter store");
  auto& slot = param_nodes_.at(id.index);
  if (slot >= 0) return Var{this, static_cast<std::uint32_t>(slot)};
  Node n;
  n.external = &store_->value(id);
  n.needs_grad = grad_enabled_;
  n.param = static_cast<std::int64_t>(id.index);
  Var v = push(std::move(n));
  slot = v.id;
  return v;
}

Var Graph::emit(Tensor value, std::initializer_list<Var> parents, Backward fn) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& p : parents) n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Var Graph::emit(Tensor value, const std::vector<Var>& parents, Backward fn) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& p : parents) n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

const Tensor& Graph::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

Tensor& Graph::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.grad_live) {
    n.grad = Tensor(value(id).shape());
    n.grad_live = true;
  }
  return n.grad;
}

const Tensor* Graph::grad_of(Var v) const {
  const Node& n = nodes_[v.id];
  return n.grad_live ? &n.grad : nullptr;
}

void Graph::backward(Var loss, double seed) {
  if (!grad_enabled_) throw ConfigError("backward() on a graph with gradients disabled");
  if (value(loss).size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + shape_str(value(loss).shape()));
  }
  grad(loss.id)[0] += seed;
  for (std::int64_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.grad_live || !n.backward) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
  if (!grads_) return;
  for (const Node& n : nodes_) {
    if (n.param < 0 || !n.grad_live) continue;
    auto dst = (*grads_)[static_cast<std::size_t>(n.param)].data();
    auto src = n.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

}  // namespace hybridnet
