#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>

#include "vclip/numerics/tensor.hpp"

namespace vclip {

/// Handle to a node in a Graph.
struct Var {
  static constexpr std::uint32_t kInvalid = ~std::uint32_t{0};
  std::uint32_t id = kInvalid;

  bool valid() const noexcept { return id != kInvalid; }
  friend bool operator==(Var a, Var b) noexcept { return a.id == b.id; }
};

/// Tape of forward values and backward rules for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the tape is already topologically
/// sorted. backward() walks it once, from the root down to node 0. A graph is
/// single-threaded; independent graphs may live on different threads.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// A value that never receives gradient.
  Var constant(Tensor<T> value);
  /// An owned leaf; its gradient is readable after backward() when requires_grad.
  Var leaf(Tensor<T> value, bool requires_grad);
  /// A leaf that references `external` without copying. `external` must outlive the graph.
  Var bind(const Tensor<T>& external, bool requires_grad);
  /// Appends an op result. The backward rule is kept only if a parent requires grad.
  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Tensor<T> value, std::span<const Var> parents, BackwardFn backward);

  /// The handle the next recorded node will receive.
  Var next_var() const noexcept { return Var{static_cast<std::uint32_t>(nodes_.size())}; }

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const;
  bool has_grad(Var v) const;
  /// Gradient accumulated by backward(); zeros when nothing reached the node.
  Tensor<T> grad(Var v) const;

  /// Adds `g` into the gradient of `v` (no-op when v does not require grad).
  void accumulate(Var v, const Tensor<T>& g);
  /// Mutable gradient buffer for `v`, zero-allocated on first use.
  Tensor<T>& grad_ref(Var v);

  /// Backward from a single-element root with seed 1.
  void backward(Var root);
  /// Backward from `root` with an explicit upstream gradient.
  void backward(Var root, const Tensor<T>& seed);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace vclip
