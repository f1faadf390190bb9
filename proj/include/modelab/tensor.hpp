// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a dynamic reverse-mode differentiation graph.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace modelab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for any shape or channel disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl;

/// Recorded producer of a non-leaf tensor. `backward` reads the output's
/// data and grad and accumulates into the inputs that require gradients.
struct GradNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool consumed = false;     // set once backward has run through this node
  std::shared_ptr<GradNode> node;

  void accumulate_grad(std::span<const double> g);
  std::span<double> grad_buffer();  // allocates zeros on first use
};

/// Shared handle to a tensor. Copies alias the same storage; the data of a
/// graph-produced tensor is never modified after construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable access for leaves (parameters, inputs). Throws on graph outputs.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, no graph history, fresh storage.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  TensorImpl& checked() const;
  std::shared_ptr<TensorImpl> impl_;
};

// Graph recording toggles. Gradient tracking is per thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Runs reverse-mode differentiation from a scalar root. Leaf gradients
/// accumulate across calls until zero_grad(); the graph is consumed, so a
/// second call on the same root throws std::logic_error.
void backward(const Tensor& root);

// Elementwise ops. Operands must have identical shapes (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

// Reductions to a scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Same-padded, stride-1 cross-correlation. `bias` may be undefined.
/// input [B,Ci,H,W], weight [Co,Ci,k,k] with odd k, bias [Co].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {});

/// Per-sample normalization over (C,H,W), then per-channel affine.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// map [B,1,H,W] multiplied into every channel of x [B,C,H,W].
Tensor hadamard_channel_broadcast(const Tensor& map, const Tensor& x);

/// Channels [start, start+count) of a [B,C,H,W] tensor.
Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count);

/// Per batch row: take_a[b] ? a[b] : b_[b]. The unselected operand's values are never read.
Tensor select_batch(const std::vector<bool>& take_a, const Tensor& a, const Tensor& b);

/// Detached copy clamped into [lo, hi].
Tensor clamped(const Tensor& x, double lo = 0.0, double hi = 1.0);

/// Max over coordinates of |analytic - numeric| / max(1, |numeric|) using
/// central differences of step h. `x` is perturbed in place and restored.
double grad_check(const std::function<Tensor()>& f, Tensor& x, double h = 1e-4);

}  // namespace modelab
