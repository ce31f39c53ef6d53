// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor-level reverse-mode differentiation. A Tape records every value
// produced during one forward pass together with a closure that pushes the
// output gradient back to its inputs. Nodes that do not depend on any
// gradient-requiring leaf carry no closure, so frozen sub-graphs cost only
// their forward pass.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "ssladd/tensor.hpp"

namespace ssladd::ag {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var Constant(Tensor value);
  // Leaf owned by the tape; its gradient is readable after Backward().
  Var Leaf(Tensor value, bool requires_grad);
  // Leaf that references a parameter tensor owned elsewhere. The referenced
  // tensor must outlive the tape. Gradients are reported under param_id.
  Var Param(const Tensor& value, std::size_t param_id, bool requires_grad);

  // Adds a derived node. `backward` is kept only if some parent needs a
  // gradient; it receives the tape and the id of the new node.
  Var Record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var Record(Tensor value, std::span<const Var> parents, BackwardFn backward);

  const Tensor& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  // Gradient accumulator for a node, allocated as zeros on first use.
  Tensor& grad(std::uint32_t id);
  bool has_grad(std::uint32_t id) const { return !nodes_[id].grad.empty(); }
  const Tensor* grad_or_null(Var v) const;

  // Seeds d(root)/d(root) = 1 for a single-element root and runs all
  // recorded closures in reverse order.
  void Backward(Var root);

  // Accumulated gradients of Param leaves, summed over repeated uses.
  std::vector<std::pair<std::size_t, Tensor>> ParamGrads() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    BackwardFn backward;
    std::int64_t param_id = -1;
    bool requires_grad = false;
  };
  Var Push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

// ---- generic differentiable operations -------------------------------------

Var Add(Var a, Var b);
Var AddConstant(Var a, const Tensor& c);
Var Scale(Var a, double c);
// a * s[index], with s a vector Var.
Var ScaleBy(Var a, Var s, std::size_t index);
// The derivative at exactly 0 is taken from the right (1). A zero-initialised
// up-projection followed by ReLU would otherwise never receive a gradient.
Var Relu(Var a);
Var Gelu(Var a);
Var Sigmoid(Var a);

// y = x W^T + b for x [n x in], W [out x in], b [out].
Var Linear(Var x, Var w, std::optional<Var> b = std::nullopt);
// Plain product a [m x k] * b [k x n].
Var MatMul(Var a, Var b);
Var Transpose(Var a);
Var Reshape(Var a, Shape shape);

Var LayerNorm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var RowSoftmax(Var x);

// Multi-head scaled dot-product attention over rows of q, k, v [n x d].
// When probs is non-null it receives the attention matrices [heads x n x n].
Var Attention(Var q, Var k, Var v, std::size_t heads, Tensor* probs = nullptr);

// Valid 1-D convolution, x [c_in x t], w [c_out x c_in x k], b [c_out].
Var Conv1d(Var x, Var w, Var b, std::size_t stride);
// Zero-padded stride-1 3x3 convolution, x [c_in x h x w], w [c_out x c_in x 3 x 3].
Var Conv2dSame(Var x, Var w);

struct BatchNormStats {
  Tensor mean;
  Tensor var_unbiased;
};
// Per-channel normalization of x [c x h x w]. Training mode normalizes with
// the statistics of x and reports them through `stats`; evaluation mode uses
// the supplied running statistics.
Var BatchNorm2d(Var x, Var gamma, Var beta, bool training, const Tensor& running_mean,
                const Tensor& running_var, BatchNormStats* stats, double eps = 1e-5);

// [c x h x w] -> [h x (c*w)]: each row concatenates the channels of one grid row.
Var ChannelsToRows(Var x);

// Replaces the listed rows of z [n x d] with the shared embedding emb [d].
Var MaskRows(Var z, Var emb, std::span<const std::size_t> rows);

// Attentive statistics pooling of x [t x d] with frame-scoring vector w [d]:
// softmax attention over frames, then weighted mean || weighted std [2d].
Var AspPool(Var x, Var w, double var_floor = 1e-9);

// Scales layer l of the stack by vh[l] and concatenates layers per frame:
// L x [t x d] -> [t x L*d].
Var WeightedFlatten(std::span<const Var> layers, Var vh);

// Concatenates the flattened values of the inputs into one vector.
Var Stack(std::span<const Var> parts);

// Scalar sum of elementwise product with a constant tensor.
Var Dot(Var a, const Tensor& weights);
Var Sum(Var a);

}  // namespace ssladd::ag
