// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tensor_internal.hpp"

namespace modelab {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void TensorImpl::accumulate_grad(std::span<const double> g) {
  auto buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::span<double> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor handle

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> data) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::size_t n = shape_numel(shape);
  return Tensor(new_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  return Tensor(new_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

TensorImpl& Tensor::checked() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) throw ShapeError("dimension index out of range for shape " + shape_str(s));
  return s[i];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }

std::span<double> Tensor::mutable_data() {
  auto& impl = checked();
  if (impl.node) throw std::logic_error("cannot mutate the data of a graph-produced tensor");
  return impl.data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  auto& impl = checked();
  if (impl.node) throw std::logic_error("requires_grad can only be set on leaf tensors");
  impl.requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return checked().node == nullptr; }

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const {
  auto& impl = checked();
  if (impl.grad.empty()) throw std::logic_error("tensor has no gradient");
  return impl.grad;
}

std::span<double> Tensor::mutable_grad() { return checked().grad_buffer(); }

void Tensor::zero_grad() { checked().grad.clear(); }

Tensor Tensor::detach() const { return from_data(shape(), std::vector<double>(data().begin(), data().end())); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> inputs, std::function<void(const TensorImpl&)> bw) {
  Tensor out(new_impl(std::move(shape), std::move(data)));
  if (!g_grad_enabled) return out;
  bool track = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  if (!track) return out;
  auto node = std::make_shared<GradNode>();
  node->op = op;
  for (auto& t : inputs) node->inputs.push_back(t.impl_ptr());
  node->backward = std::move(bw);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.ndim() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
}

}  // namespace detail

using detail::make_result;
using detail::require_same_shape;

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& root) {
  if (!root.defined()) throw std::logic_error("backward on undefined tensor");
  if (root.numel() != 1)
    throw ShapeError("backward requires a scalar root, got " + shape_str(root.shape()));
  TensorImpl* r = root.impl();
  if (r->consumed) throw std::logic_error("backward called twice on the same graph");
  if (!r->requires_grad) throw std::logic_error("backward root does not require grad");

  // Iterative post-order DFS; reversed it is a valid reverse topological order.
  // `order` owns the nodes so resetting a producer cannot free a pending input.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack{{root.impl_ptr(), 0}};
  visited.insert(r);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      std::shared_ptr<TensorImpl> child = impl->node->inputs[next++];
      if (child->requires_grad && !visited.count(child.get())) {
        if (child->consumed) throw std::logic_error("backward through an already-consumed graph");
        visited.insert(child.get());
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    order.push_back(std::move(impl));
    stack.pop_back();
  }

  r->accumulate_grad(std::vector<double>{1.0});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = it->get();
    if (!impl->node) continue;
    if (!impl->grad.empty()) impl->node->backward(*impl);
    impl->node.reset();
    impl->consumed = true;
    impl->grad.clear();
    impl->grad.shrink_to_fit();
    it->reset();
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_result(a.shape(), std::move(out), "add", {a, b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad) ai->accumulate_grad(o.grad);
    if (bi->requires_grad) bi->accumulate_grad(o.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad) ai->accumulate_grad(o.grad);
    if (bi->requires_grad) {
      auto g = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_result(a.shape(), std::move(out), "hadamard", {a, b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad) {
      auto g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto g = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
  auto ai = a.impl_ptr();
  return make_result(a.shape(), std::move(out), "scale", {a}, [ai, c](const TensorImpl& o) {
    auto g = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * o.grad[i];
  });
}

namespace {

// Largest double below 1; keeps saturated activations strictly inside the open interval.
constexpr double kBelowOne = 1.0 - std::numeric_limits<double>::epsilon() / 2;

double stable_sigmoid(double v) {
  double s;
  if (v >= 0) {
    s = 1.0 / (1.0 + std::exp(-v));
  } else {
    double e = std::exp(v);
    s = e / (1.0 + e);
  }
  return std::clamp(s, std::numeric_limits<double>::min(), kBelowOne);
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(in[i]);
  auto xi = x.impl_ptr();
  return make_result(x.shape(), std::move(out), "sigmoid", {x}, [xi](const TensorImpl& o) {
    auto g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double s = o.data[i];
      g[i] += o.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor tanh(const Tensor& x) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(std::tanh(in[i]), -kBelowOne, kBelowOne);
  auto xi = x.impl_ptr();
  return make_result(x.shape(), std::move(out), "tanh", {x}, [xi](const TensorImpl& o) {
    auto g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double t = o.data[i];
      g[i] += o.grad[i] * (1.0 - t * t);
    }
  });
}

Tensor abs(const Tensor& x) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(in[i]);
  auto xi = x.impl_ptr();
  return make_result(x.shape(), std::move(out), "abs", {x}, [xi](const TensorImpl& o) {
    auto g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double v = xi->data[i];
      // subgradient 0 at the kink
      g[i] += v > 0 ? o.grad[i] : (v < 0 ? -o.grad[i] : 0.0);
    }
  });
}

Tensor square(const Tensor& x) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * in[i];
  auto xi = x.impl_ptr();
  return make_result(x.shape(), std::move(out), "square", {x}, [xi](const TensorImpl& o) {
    auto g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * xi->data[i] * o.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  auto in = x.data();
  double s = 0.0;
  for (double v : in) s += v;
  auto xi = x.impl_ptr();
  return make_result({1}, {s}, "sum", {x}, [xi](const TensorImpl& o) {
    auto g = xi->grad_buffer();
    double go = o.grad[0];
    for (auto& v : g) v += go;
  });
}

Tensor mean(const Tensor& x) {
  auto in = x.data();
  double s = 0.0;
  for (double v : in) s += v;
  double n = static_cast<double>(in.size());
  auto xi = x.impl_ptr();
  return make_result({1}, {s / n}, "mean", {x}, [xi, n](const TensorImpl& o) {
    auto g = xi->grad_buffer();
    double go = o.grad[0] / n;
    for (auto& v : g) v += go;
  });
}

// ---------------------------------------------------------------------------
// Normalization and channel plumbing

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  detail::require_rank(x, 4, "layer_norm", "input");
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match input " + shape_str(x.shape()));
  const std::size_t per = C * HW;
  auto in = x.data();
  auto gm = gamma.data(), bt = beta.data();
  std::vector<double> out(in.size()), xhat(in.size()), inv_std(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double* p = in.data() + b * per;
    double mu = 0.0;
    for (std::size_t i = 0; i < per; ++i) mu += p[i];
    mu /= static_cast<double>(per);
    double var = 0.0;
    for (std::size_t i = 0; i < per; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(per);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[b] = is;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < HW; ++k) {
        std::size_t i = b * per + c * HW + k;
        xhat[i] = (in[i] - mu) * is;
        out[i] = xhat[i] * gm[c] + bt[c];
      }
  }
  auto xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr();
  return make_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, HW, per](const TensorImpl& o) {
        const auto& gy = o.grad;
        if (gi->requires_grad || bi->requires_grad) {
          std::vector<double> dg(C, 0.0), db(C, 0.0);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t k = 0; k < HW; ++k) {
                std::size_t i = b * per + c * HW + k;
                dg[c] += gy[i] * xhat[i];
                db[c] += gy[i];
              }
          if (gi->requires_grad) gi->accumulate_grad(dg);
          if (bi->requires_grad) bi->accumulate_grad(db);
        }
        if (!xi->requires_grad) return;
        auto gx = xi->grad_buffer();
        const double n = static_cast<double>(per);
        std::vector<double> dxhat(per);
        for (std::size_t b = 0; b < B; ++b) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < HW; ++k) {
              std::size_t j = c * HW + k, i = b * per + j;
              dxhat[j] = gy[i] * gi->data[c];
              s1 += dxhat[j];
              s2 += dxhat[j] * xhat[i];
            }
          for (std::size_t j = 0; j < per; ++j) {
            std::size_t i = b * per + j;
            gx[i] += inv_std[b] / n * (n * dxhat[j] - s1 - xhat[i] * s2);
          }
        }
      });
}

Tensor hadamard_channel_broadcast(const Tensor& map, const Tensor& x) {
  detail::require_rank(map, 4, "hadamard_channel_broadcast", "map");
  detail::require_rank(x, 4, "hadamard_channel_broadcast", "input");
  const auto& ms = map.shape();
  const auto& xs = x.shape();
  if (ms[1] != 1 || ms[0] != xs[0] || ms[2] != xs[2] || ms[3] != xs[3])
    throw ShapeError("hadamard_channel_broadcast: map " + shape_str(ms) + " incompatible with " +
                     shape_str(xs));
  const std::size_t B = xs[0], C = xs[1], HW = xs[2] * xs[3];
  auto m = map.data(), v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < HW; ++k) out[(b * C + c) * HW + k] = m[b * HW + k] * v[(b * C + c) * HW + k];
  auto mi = map.impl_ptr(), xi = x.impl_ptr();
  return make_result(xs, std::move(out), "hadamard_channel_broadcast", {map, x},
                     [mi, xi, B, C, HW](const TensorImpl& o) {
                       if (mi->requires_grad) {
                         auto g = mi->grad_buffer();
                         for (std::size_t b = 0; b < B; ++b)
                           for (std::size_t c = 0; c < C; ++c)
                             for (std::size_t k = 0; k < HW; ++k) {
                               std::size_t i = (b * C + c) * HW + k;
                               g[b * HW + k] += o.grad[i] * xi->data[i];
                             }
                       }
                       if (xi->requires_grad) {
                         auto g = xi->grad_buffer();
                         for (std::size_t b = 0; b < B; ++b)
                           for (std::size_t c = 0; c < C; ++c)
                             for (std::size_t k = 0; k < HW; ++k) {
                               std::size_t i = (b * C + c) * HW + k;
                               g[i] += o.grad[i] * mi->data[b * HW + k];
                             }
                       }
                     });
}

Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count) {
  detail::require_rank(x, 4, "slice_channels", "input");
  const auto& xs = x.shape();
  if (count == 0 || start + count > xs[1])
    throw ShapeError("slice_channels: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside " + shape_str(xs));
  const std::size_t B = xs[0], C = xs[1], HW = xs[2] * xs[3];
  auto in = x.data();
  std::vector<double> out(B * count * HW);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(in.data() + (b * C + start) * HW, count * HW, out.data() + b * count * HW);
  auto xi = x.impl_ptr();
  return make_result({B, count, xs[2], xs[3]}, std::move(out), "slice_channels", {x},
                     [xi, B, C, HW, start, count](const TensorImpl& o) {
                       auto g = xi->grad_buffer();
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t j = 0; j < count * HW; ++j)
                           g[(b * C + start) * HW + j] += o.grad[b * count * HW + j];
                     });
}

Tensor select_batch(const std::vector<bool>& take_a, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "select_batch");
  const std::size_t B = a.dim(0);
  if (take_a.size() != B)
    throw ShapeError("select_batch: mask length " + std::to_string(take_a.size()) +
                     " does not match batch of " + shape_str(a.shape()));
  const std::size_t per = a.numel() / B;
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t r = 0; r < B; ++r) {
    const double* src = (take_a[r] ? x.data() : y.data()) + r * per;
    std::copy_n(src, per, out.data() + r * per);
  }
  auto ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_result(a.shape(), std::move(out), "select_batch", {a, b},
                     [ai, bi, take_a, per](const TensorImpl& o) {
                       for (std::size_t r = 0; r < take_a.size(); ++r) {
                         TensorImpl* dst = take_a[r] ? ai.get() : bi.get();
                         if (!dst->requires_grad) continue;
                         auto g = dst->grad_buffer();
                         for (std::size_t j = 0; j < per; ++j) g[r * per + j] += o.grad[r * per + j];
                       }
                     });
}

Tensor clamped(const Tensor& x, double lo, double hi) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(in[i], lo, hi);
  return Tensor::from_data(x.shape(), std::move(out));
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor()>& f, Tensor& x, double h) {
  if (!x.is_leaf() || !x.requires_grad())
    throw std::invalid_argument("grad_check: x must be a leaf that requires grad");
  x.zero_grad();
  Tensor root = f();
  backward(root);
  std::vector<double> analytic = x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                              : std::vector<double>(x.numel(), 0.0);
  x.zero_grad();

  NoGradGuard guard;
  auto data = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + h;
    double fp = f().item();
    data[i] = saved - h;
    double fm = f().item();
    data[i] = saved;
    double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric)));
  }
  return worst;
}

}  // namespace modelab
