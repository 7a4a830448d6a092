#include "vclip/numerics/graph.hpp"

#include "vclip/errors.hpp"

namespace vclip {

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw InputError("invalid graph variable");
  return nodes_[v.id];
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw InputError("invalid graph variable");
  return nodes_[v.id];
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
Var Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::bind(const Tensor<T>& external, bool requires_grad) {
  Node& n = nodes_.emplace_back();
  n.external = &external;
  n.requires_grad = requires_grad;
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || node(p).requires_grad;
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.owned;
}

template <typename T>
bool Graph<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
bool Graph<T>::has_grad(Var v) const {
  return node(v).has_grad;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  return Tensor<T>(value(v).dims());
}

template <typename T>
Tensor<T>& Graph<T>::grad_ref(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = Tensor<T>(value(v).dims());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
void Graph<T>::accumulate(Var v, const Tensor<T>& g) {
  if (!node(v).requires_grad) return;
  Tensor<T>& dst = grad_ref(v);
  if (dst.numel() != g.numel()) {
    throw ShapeError("gradient " + shape_string(g.dims()) + " does not match value " +
                     shape_string(dst.dims()));
  }
  T* d = dst.data();
  const T* s = g.data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

template <typename T>
void Graph<T>::backward(Var root) {
  if (value(root).numel() != 1) {
    throw ShapeError("backward() without a seed needs a single-element root, got " +
                     shape_string(value(root).dims()));
  }
  backward(root, Tensor<T>(value(root).dims(), T{1}));
}

template <typename T>
void Graph<T>::backward(Var root, const Tensor<T>& seed) {
  if (!node(root).requires_grad) return;
  accumulate(root, seed);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace vclip
