#pragma once

// Define-by-run reverse-mode differentiation over dense tensors.
//
// A Tape records every primitive as it executes. Node ids grow monotonically
// and every node's parents precede it, so the backward pass is a single sweep
// in reverse id order. A Tape belongs to one thread; independent tapes share
// nothing and may run concurrently.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "mmtm/tensor.hpp"

namespace mmtm {

class Tape;

// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Propagates grad_out (d loss / d node) into the parents' gradient buffers.
  using Backward = std::function<void(std::span<const double> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant input; never receives a gradient.
  Var constant(Tensor value);
  // Constant that refers to caller-owned storage, which must outlive the tape.
  Var constant_ref(const Tensor& value);
  // Differentiable leaf owning its value.
  Var leaf(Tensor value);
  // Differentiable leaf referring to caller-owned storage (model parameters).
  Var parameter(const Tensor& value);

  // Appends the result of a primitive. The node requires a gradient iff any
  // parent does; otherwise the backward function is dropped.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor value, std::span<const Var> parents, Backward backward);

  // Runs the reverse sweep from a single-element loss. A tape supports one
  // backward pass; a second call throws UsageError.
  void backward(Var loss);

  // d loss / d v after backward(); zeros for nodes the loss does not depend on.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

  // For use inside backward functions.
  const Tensor& value(std::size_t id) const;
  // Gradient accumulator of a node, or an empty span if it needs none.
  std::span<double> grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node node);
  void check_owner(Var v) const;

  std::deque<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool backward_done_ = false;
};

enum class Padding { Valid, Same };

// ---- primitives ----------------------------------------------------------

// y[o] = sum_i w[o,i] x[i]
Var matmul(Var w, Var x);
// w x + b in one node.
Var affine(Var w, Var x, Var b);
// Per-channel mean over every non-channel index. Rank-1 inputs pass through.
Var mean_over_non_channel(Var x);
// Concatenates along the channel axis. All inputs share their non-channel shape.
Var concat_channels(std::span<const Var> xs);
Var slice_channels(Var x, std::size_t begin, std::size_t count);

Var sigmoid(Var x);
Var relu(Var x);
Var add(Var x, Var y);
Var sub(Var x, Var y);
Var mul(Var x, Var y);
Var scale(Var x, double k);
// Natural log; every element must be positive.
Var log(Var x);

// gate[c] * x[..., c]
Var channelwise_mul(Var gate, Var x);
// bias[c] + x[..., c]
Var channelwise_add(Var bias, Var x);

// Cross-correlation of x [H,W,Cin] with kernels [kh,kw,Cin,Cout].
Var conv2d(Var x, Var kernels, std::size_t stride = 1, Padding padding = Padding::Same);
// 1x1 convolution of an arbitrary-rank x [..., Cin] with w [Cout,Cin] and b [Cout].
Var pointwise_affine(Var x, Var w, Var b);
// Non-overlapping mean pooling of x [H,W,C]; trailing rows/columns are dropped.
Var mean_pool2d(Var x, std::size_t factor);

Var reshape(Var x, Shape shape);
Var flatten(Var x);

// Scalar reductions; results have shape [1].
Var sum(Var x);
Var sum_squares(Var x);
// -log softmax(logits)[label]
Var cross_entropy(Var logits, std::size_t label);
Var softmax(Var x);
// Elementwise mean of equally-shaped tensors.
Var mean_of(std::span<const Var> xs);

}  // namespace mmtm
