// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/cells.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace modelab {
namespace {

std::size_t gate_index(Gate g) { return static_cast<std::size_t>(g); }

Tensor copy_rows(const Tensor& src, std::size_t first_row, std::size_t rows, Shape shape) {
  std::size_t per = src.numel() / src.dim(0);
  auto d = src.data();
  return Tensor::from_data(std::move(shape), std::vector<double>(d.begin() + first_row * per,
                                                                 d.begin() + (first_row + rows) * per));
}

void paste_rows(Tensor& dst, std::size_t first_row, const Tensor& src) {
  std::size_t per = dst.numel() / dst.dim(0);
  if (src.numel() % per != 0 || first_row * per + src.numel() > dst.numel())
    throw ShapeError("gate block " + shape_str(src.shape()) + " does not fit " + shape_str(dst.shape()));
  std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin() + first_row * per);
}

// sigma(mean_i conv(in, w[i])) over the kernel set.
Tensor multi_kernel_attention(const Tensor& in, const std::map<int, Tensor>& weights,
                              const std::vector<int>& kernel_set) {
  Tensor acc;
  for (int k : kernel_set) {
    Tensor r = conv2d(in, weights.at(k));
    acc = acc.defined() ? add(acc, r) : r;
  }
  return sigmoid(scale(acc, 1.0 / static_cast<double>(kernel_set.size())));
}

Tensor reweight(const Tensor& attn, double s, const Tensor& target, AttnChannels mode) {
  Tensor scaled = scale(attn, s);
  return mode == AttnChannels::kFull ? hadamard(scaled, target)
                                     : hadamard_channel_broadcast(scaled, target);
}

}  // namespace

// ---------------------------------------------------------------------------
// DcbParams

DcbParams DcbParams::zeros(std::size_t channels, std::vector<int> kernel_set, double scale_s,
                           AttnChannels attn) {
  DcbParams p;
  p.kernel_set = std::move(kernel_set);
  p.scale_s = scale_s;
  p.attn = attn;
  const std::size_t co = p.attn_out_channels(channels);
  for (int k : p.kernel_set) {
    if (k <= 0) throw std::invalid_argument("kernel sizes must be positive");
    auto ku = static_cast<std::size_t>(k);
    p.w_h[k] = Tensor::zeros({co, channels, ku, ku});
    p.w_x[k] = Tensor::zeros({co, channels, ku, ku});
  }
  p.validate(channels);
  return p;
}

void DcbParams::validate(std::size_t channels) const {
  if (kernel_set.empty()) throw std::invalid_argument("DCB kernel set is empty");
  for (std::size_t i = 0; i < kernel_set.size(); ++i) {
    if (kernel_set[i] <= 0 || kernel_set[i] % 2 == 0)
      throw std::invalid_argument("DCB kernel sizes must be positive and odd, got " +
                                  std::to_string(kernel_set[i]));
    if (i > 0 && kernel_set[i] <= kernel_set[i - 1])
      throw std::invalid_argument("DCB kernel set must be strictly increasing");
  }
  if (!(scale_s > 0)) throw std::invalid_argument("DCB scale factor must be positive");
  if (w_h.size() != kernel_set.size() || w_x.size() != kernel_set.size())
    throw std::invalid_argument("DCB weight maps do not match the kernel set");
  const std::size_t co = attn_out_channels(channels);
  for (int k : kernel_set) {
    auto ku = static_cast<std::size_t>(k);
    Shape want{co, channels, ku, ku};
    for (const auto* m : {&w_h, &w_x}) {
      auto it = m->find(k);
      if (it == m->end()) throw std::invalid_argument("DCB weights missing kernel " + std::to_string(k));
      if (it->second.shape() != want)
        throw ShapeError("DCB weight for kernel " + std::to_string(k) + " has shape " +
                         shape_str(it->second.shape()) + ", expected " + shape_str(want));
    }
  }
}

std::vector<Tensor> DcbParams::tensors() const {
  std::vector<Tensor> out;
  for (int k : kernel_set) out.push_back(w_h.at(k));
  for (int k : kernel_set) out.push_back(w_x.at(k));
  return out;
}

// ---------------------------------------------------------------------------
// GateParams

GateParams GateParams::zeros(std::size_t channels) {
  GateParams p;
  p.w_x = Tensor::zeros({4 * channels, channels, kKernel, kKernel});
  p.w_h = Tensor::zeros({4 * channels, channels, kKernel, kKernel});
  p.bias = Tensor::zeros({4 * channels});
  return p;
}

void GateParams::validate(std::size_t channels) const {
  Shape w{4 * channels, channels, kKernel, kKernel};
  if (!w_x.defined() || !w_h.defined() || !bias.defined())
    throw std::invalid_argument("gate parameters are not initialized");
  if (w_x.shape() != w || w_h.shape() != w || bias.shape() != Shape{4 * channels})
    throw ShapeError("gate parameters " + shape_str(w_x.shape()) + "/" + shape_str(w_h.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match " + std::to_string(channels) + " channels");
}

Tensor GateParams::gate_w_x(Gate g) const {
  std::size_t c = channels();
  return copy_rows(w_x, gate_index(g) * c, c, {c, c, kKernel, kKernel});
}

Tensor GateParams::gate_w_h(Gate g) const {
  std::size_t c = channels();
  return copy_rows(w_h, gate_index(g) * c, c, {c, c, kKernel, kKernel});
}

Tensor GateParams::gate_bias(Gate g) const {
  std::size_t c = channels();
  return copy_rows(bias, gate_index(g) * c, c, {c});
}

void GateParams::set_gate(Gate g, const Tensor& wx, const Tensor& wh, const Tensor& b) {
  std::size_t c = channels();
  Shape w{c, c, kKernel, kKernel};
  if (wx.shape() != w || wh.shape() != w || b.shape() != Shape{c})
    throw ShapeError("gate block shapes " + shape_str(wx.shape()) + "/" + shape_str(wh.shape()) + "/" +
                     shape_str(b.shape()) + " do not match " + shape_str(w));
  paste_rows(w_x, gate_index(g) * c, wx);
  paste_rows(w_h, gate_index(g) * c, wh);
  paste_rows(bias, gate_index(g) * c, b);
}

// ---------------------------------------------------------------------------
// Forward

DcbOutput dcb_forward(const Tensor& x, const Tensor& h_prev, const DcbParams& p, bool eq2_literal) {
  if (x.shape() != h_prev.shape())
    throw ShapeError("dcb_forward: input " + shape_str(x.shape()) + " and context " +
                     shape_str(h_prev.shape()) + " differ");
  if (x.ndim() != 4) throw ShapeError("dcb_forward: expected [B,C,H,W], got " + shape_str(x.shape()));
  p.validate(x.dim(1));

  DcbTrace trace;
  trace.attn_h = multi_kernel_attention(h_prev, p.w_h, p.kernel_set);
  Tensor x_hat = reweight(trace.attn_h, p.scale_s, eq2_literal ? h_prev : x, p.attn);
  trace.attn_x = multi_kernel_attention(x_hat, p.w_x, p.kernel_set);
  Tensor h_hat = reweight(trace.attn_x, p.scale_s, eq2_literal ? x_hat : h_prev, p.attn);
  return {x_hat, h_hat, {trace}};
}

DcbOutput dcb_stack(const Tensor& x, const Tensor& h_prev, const std::vector<DcbParams>& blocks,
                    bool eq2_literal) {
  if (blocks.empty())
    throw std::invalid_argument("dcb_stack: at least one block is required (disable the DCB instead)");
  DcbOutput out{x, h_prev, {}};
  for (const auto& block : blocks) {
    DcbOutput step = dcb_forward(out.x_hat, out.h_hat, block, eq2_literal);
    out.x_hat = step.x_hat;
    out.h_hat = step.h_hat;
    out.traces.push_back(step.traces.front());
  }
  return out;
}

CellState convlstm_gates(const Tensor& x_in, const Tensor& h_in, const Tensor& c_prev,
                         const GateParams& p) {
  if (x_in.shape() != h_in.shape() || x_in.shape() != c_prev.shape())
    throw ShapeError("convlstm_gates: shapes " + shape_str(x_in.shape()) + ", " +
                     shape_str(h_in.shape()) + ", " + shape_str(c_prev.shape()) + " disagree");
  if (x_in.ndim() != 4) throw ShapeError("convlstm_gates: expected [B,C,H,W], got " + shape_str(x_in.shape()));
  const std::size_t c = x_in.dim(1);
  p.validate(c);

  Tensor z = add(conv2d(x_in, p.w_x, p.bias), conv2d(h_in, p.w_h));
  Tensor g = tanh(slice_channels(z, 0, c));
  Tensor i = sigmoid(slice_channels(z, c, c));
  Tensor f = sigmoid(slice_channels(z, 2 * c, c));
  Tensor o = sigmoid(slice_channels(z, 3 * c, c));
  Tensor c_next = add(hadamard(f, c_prev), hadamard(i, g));
  Tensor h_next = hadamard(o, tanh(c_next));
  return {h_next, c_next};
}

CellStep modernn_cell(const Tensor& x, const CellState& state, const std::vector<DcbParams>& dcb,
                      const GateParams& gates, CellOptions opts) {
  if (!opts.use_dcb) return {convlstm_gates(x, state.h, state.c, gates), {}};
  DcbOutput d = dcb_stack(x, state.h, dcb, opts.eq2_literal);
  return {convlstm_gates(d.x_hat, d.h_hat, state.c, gates), std::move(d.traces)};
}

// ---------------------------------------------------------------------------
// Initialization

void init_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_data()) v = dist(rng);
}

DcbParams init_dcb(std::size_t channels, const std::vector<int>& kernel_set, double scale_s,
                   AttnChannels attn, std::mt19937_64& rng, double bound) {
  DcbParams p = DcbParams::zeros(channels, kernel_set, scale_s, attn);
  for (int k : p.kernel_set) init_uniform(p.w_h[k], bound, rng);
  for (int k : p.kernel_set) init_uniform(p.w_x[k], bound, rng);
  return p;
}

GateParams init_gates(std::size_t channels, std::mt19937_64& rng, double forget_bias) {
  GateParams p = GateParams::zeros(channels);
  double bound = 1.0 / std::sqrt(static_cast<double>(channels * GateParams::kKernel * GateParams::kKernel));
  init_uniform(p.w_x, bound, rng);
  init_uniform(p.w_h, bound, rng);
  auto b = p.bias.mutable_data();
  for (std::size_t j = 0; j < channels; ++j) b[gate_index(Gate::kF) * channels + j] = forget_bias;
  return p;
}

}  // namespace modelab
