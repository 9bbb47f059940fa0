// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entprop/tensor.hpp"

namespace entprop {

template <typename T>
class Graph;

/// Trainable tensor with a registry id assigned by its owning model.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::size_t id = 0;
};

/// Handle to a node of a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Parameter gradients keyed by parameter id (ordered, so iteration is deterministic).
template <typename T>
class GradientMap {
 public:
  void add(std::size_t id, const Tensor<T>& g, T weight = T{1});
  bool contains(std::size_t id) const { return grads_.count(id) != 0; }
  const Tensor<T>& at(std::size_t id) const;
  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }
  void clear() { grads_.clear(); }
  GradientMap& operator+=(const GradientMap& other);

  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<std::size_t, Tensor<T>> grads_;
};

/// Reverse-mode tape. Nodes are appended in execution order, so creation order
/// is a topological order. Activations are kept until release().
template <typename T>
class Graph {
 public:
  /// Called with the upstream gradient of the node being visited.
  using BackwardFn = std::function<void(Graph& graph, const Tensor<T>& grad_out)>;

  explicit Graph(bool checked = false) : checked_(checked) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> input(Tensor<T> value, bool requires_grad = false);
  Var<T> param(const Parameter<T>& p);

  /// Used by op implementations. requires_grad is inherited from the inputs.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward, const char* op);

  const Tensor<T>& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const { return node(v.id).requires_grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  bool has_grad(Var<T> v) const { return node(v.id).grad.has_value(); }
  /// Gradient of the last backward() w.r.t. v (inputs and parameters alike).
  const Tensor<T>& grad(Var<T> v) const;

  /// Accumulation target for op backward functions; zero-initialized on first use.
  Tensor<T>& grad_buffer(std::size_t id);

  /// Runs `hook` each time a backward pass reaches `v`.
  void on_backward(Var<T> v, std::function<void()> hook);

  /// Clears gradients from any previous call, seeds d(loss)/d(loss) = 1 and
  /// visits every node the loss depends on exactly once, in reverse order.
  GradientMap<T> backward(Var<T> loss);

  void release();
  bool released() const { return released_; }
  bool checked() const { return checked_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<Tensor<T>> grad;
    std::optional<std::size_t> param_id;
    std::vector<std::function<void()>> hooks;
    const char* op = "leaf";
  };

  const Node& node(std::size_t id) const;
  void check_finite(const Tensor<T>& t, const char* op, const char* what) const;

  std::vector<Node> nodes_;
  bool checked_ = false;
  bool released_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  require(graph != nullptr, ErrorCode::InvalidArgument, "var: not bound to a graph");
  return graph->value(*this);
}

// ---- primitives -----------------------------------------------------------
// Every differentiable primitive below has a backward; sign() is forward-only.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// x[N, ...] + bias broadcast along axis 1.
template <typename T> Var<T> add_channel_bias(Var<T> x, Var<T> bias);
/// Stride-1 2-D convolution, x[N,C,H,W] * w[O,C,KH,KW], symmetric zero padding.
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, std::size_t padding);
/// Non-overlapping average pooling with a k×k window; H and W must be divisible by k.
template <typename T> Var<T> avg_pool2d(Var<T> x, std::size_t k);
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T s);
/// Straight-through inside [lo, hi], zero gradient outside.
template <typename T> Var<T> clip(Var<T> x, T lo, T hi);
/// Forward-only; backward through it raises an error. sign(0) = 0.
template <typename T> Var<T> sign(Var<T> x);
/// Row-wise over the last axis of a (N, C) input.
template <typename T> Var<T> softmax(Var<T> x);
template <typename T> Var<T> log_softmax(Var<T> x);
/// Per-sample negative log-likelihood: out[i] = -logp[i, labels[i]].
template <typename T> Var<T> nll(Var<T> logp, std::span<const int> labels);
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
/// (N, ...) -> (N, prod(...)).
template <typename T> Var<T> flatten(Var<T> x);

/// Per-sample cross-entropy from logits.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels) {
  return nll(log_softmax(logits), labels);
}

/// Forward-only helpers on plain tensors.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& logits);
template <typename T> Tensor<T> sign_of(const Tensor<T>& x);

}  // namespace entprop
