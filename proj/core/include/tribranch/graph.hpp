#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>

#include "tribranch/tensor.hpp"

namespace tribranch {

template <typename T>
class Graph;

/// Handle to a node recorded in a Graph. Cheap to copy; valid while the
/// graph is alive.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  bool requires_grad() const;

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// A trainable tensor and its accumulated gradient (same shape).
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

/// Prefix slice over every axis, with a multiplicative factor applied to the
/// sliced values. Elastic extraction is expressed entirely in these terms.
template <typename T>
struct SliceSpec {
  Shape extents;
  T alpha = T(1);

  bool covers(const Shape& full) const { return extents == full; }
  bool is_identity(const Shape& full) const { return covers(full) && alpha == T(1); }
};

// Copies the prefix block `extents` of `full`, multiplied by alpha. When
// alpha is exactly 1 no multiplication happens, so identity slices are
// bit-exact copies.
template <typename T>
Tensor<T> take_prefix(const Tensor<T>& full, const SliceSpec<T>& slice);

// full[prefix] += alpha * part
template <typename T>
void accumulate_prefix(Tensor<T>& full, const Tensor<T>& part, T alpha);

/// Tape of primitive operations recorded during one forward pass.
///
/// Nodes are appended in execution order, so reverse insertion order is a
/// valid topological order for the backward sweep; each node is visited
/// exactly once. A graph belongs to a single thread.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  // Leaf bound to (a prefix slice of) a parameter. Gradients flowing into the
  // leaf are scattered back into `param.grad` scaled by the slice factor.
  Var<T> parameter(Parameter<T>& param, const SliceSpec<T>& slice, bool trainable = true) {
    Tensor<T> value = slice.covers(param.value.shape()) && slice.alpha == T(1)
                          ? param.value
                          : take_prefix(param.value, slice);
    if (!trainable) return push(std::move(value), false, nullptr);
    Parameter<T>* target = &param;
    const T alpha = slice.alpha;
    return push(std::move(value), true, [target, alpha](Graph& g, std::size_t self) {
      accumulate_prefix(target->grad, g.grad(self), alpha);
    });
  }

  Var<T> parameter(Parameter<T>& param, bool trainable = true) {
    return parameter(param, SliceSpec<T>{param.value.shape(), T(1)}, trainable);
  }

  // Records an op result. The backward closure is dropped when no input
  // requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || v.requires_grad();
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  // Seeds d(root)/d(root) = 1 and sweeps the tape backwards.
  void backward(Var<T> root) {
    if (root.value().size() != 1) throw DimensionError("backward() needs a scalar root");
    if (!nodes_[root.id()].requires_grad) return;
    grad(root.id()).fill(T(1));
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && n.grad_ready) n.backward(*this, id);
    }
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].grad_ready; }

  // Gradient buffer of a node, zero-filled on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad_ready) {
      n.grad = Tensor<T>(n.value.shape());
      n.grad_ready = true;
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool grad_ready = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, false, std::move(fn)});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return graph_->requires_grad(id_);
}

}  // namespace tribranch
