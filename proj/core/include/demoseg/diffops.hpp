// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense tensors.
//
// A Var is a handle to a graph node holding a forward value, a lazily
// allocated gradient and a backward closure. Every op records its parents;
// backward() visits the graph rooted at a scalar in reverse topological
// order and accumulates gradients into every node that requires them.
// Graphs are single-threaded; distinct graphs may be built concurrently as
// long as they do not share leaves that are being written.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "demoseg/tensor.hpp"

namespace demoseg {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient storage, zero-initialised on first use.
  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  /// Leaf that never receives gradient.
  static Var constant(Tensor<T> value);
  /// Leaf that accumulates gradient (parameters, grad-check inputs).
  static Var leaf(Tensor<T> value, bool requires_grad = true);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Accumulated gradient; zeros when nothing has flowed in yet.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() {
    if (node_) node_->grad = Tensor<T>();
  }
  const std::string& op() const { return node_->op; }

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op node. The node requires grad iff any parent does; otherwise
/// the backward closure and parent links are dropped.
template <typename T>
Var<T> make_op(std::string name, Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward);

/// Runs reverse-mode accumulation from a single-element root.
template <typename T>
void backward(const Var<T>& root);

namespace ops {

/// 3D convolution with "same" padding (pad = k/2). x: [Cin,D,H,W],
/// w: [Cout,Cin,k,k,k] with k odd, b: [Cout] or undefined.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1);

/// Transposed convolution, kernel 2, stride 2. w: [Cin,Cout,2,2,2].
template <typename T>
Var<T> conv_transpose3d(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// Per-channel normalisation over the spatial axes with affine gamma/beta: [C].
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope = 0.01);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> log(const Var<T>& x);

/// Spatial mean of every channel: [C, ...] -> [C].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// y = W x + b with x: [Cin], W: [Cout, Cin], b: [Cout] or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis = 0);

/// Sub-range [begin, end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::int64_t begin, std::int64_t end);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, double s);

/// Sum of all elements, shape [1].
template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> mean(const Var<T>& x);

/// y[c] = x[index[c]] along axis 0.
template <typename T>
Var<T> channel_gather(const Var<T>& x, const std::vector<std::int64_t>& index);

/// y[c, ...] = x[c, ...] * s[c].
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& s);

/// Mean over non-overlapping 2x2x2 blocks of a [C,D,H,W] map.
template <typename T>
Var<T> avg_pool2(const Var<T>& x);

/// Same value, no gradient path.
template <typename T>
Var<T> detach(const Var<T>& x);

}  // namespace ops
}  // namespace demoseg
