// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Recurrent cells: the Detail Context Block (multi-kernel sigmoid attention
// that couples input and context states), the ConvLSTM gate update, and
// their composition.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "modelab/tensor.hpp"

namespace modelab {

/// Output channels of the attention convolutions.
enum class AttnChannels {
  kFull,    // C -> C, per-channel attention
  kSingle,  // C -> 1, one spatial map shared across channels
};

/// Weights of one Detail Context Block.
struct DcbParams {
  std::vector<int> kernel_set;  // odd, strictly increasing
  std::map<int, Tensor> w_h;    // context branch, [Co,C,k,k]
  std::map<int, Tensor> w_x;    // input branch, [Co,C,k,k]
  double scale_s = 2.0;
  AttnChannels attn = AttnChannels::kFull;

  static DcbParams zeros(std::size_t channels, std::vector<int> kernel_set, double scale_s = 2.0,
                         AttnChannels attn = AttnChannels::kFull);
  std::size_t attn_out_channels(std::size_t channels) const {
    return attn == AttnChannels::kFull ? channels : 1;
  }
  /// Throws std::invalid_argument / ShapeError when an invariant is broken.
  void validate(std::size_t channels) const;
  std::vector<Tensor> tensors() const;  // w_h by kernel, then w_x by kernel
};

enum class Gate : std::size_t { kG = 0, kI = 1, kF = 2, kO = 3 };

/// ConvLSTM gate weights. The four gates are stored fused along the output
/// channel axis in the order g, i, f, o: w_x and w_h are [4C,C,5,5], bias [4C].
struct GateParams {
  static constexpr std::size_t kKernel = 5;
  Tensor w_x, w_h, bias;

  static GateParams zeros(std::size_t channels);
  std::size_t channels() const { return w_x.dim(1); }
  void validate(std::size_t channels) const;

  /// Detached per-gate views ([C,C,5,5] / [C]).
  Tensor gate_w_x(Gate g) const;
  Tensor gate_w_h(Gate g) const;
  Tensor gate_bias(Gate g) const;
  void set_gate(Gate g, const Tensor& w_x_gate, const Tensor& w_h_gate, const Tensor& bias_gate);
};

struct CellState {
  Tensor h;  // context
  Tensor c;  // memory

  static CellState zeros(const Shape& shape) { return {Tensor::zeros(shape), Tensor::zeros(shape)}; }
};

/// Attention maps of one block: attn_h reweights the input, attn_x the context.
struct DcbTrace {
  Tensor attn_h;
  Tensor attn_x;
};

struct DcbOutput {
  Tensor x_hat;
  Tensor h_hat;
  std::vector<DcbTrace> traces;
};

/// One Detail Context Block. With `eq2_literal` the context map reweights the
/// context itself (x_hat = s*attn_h*h_prev) and the current input is unused.
DcbOutput dcb_forward(const Tensor& x, const Tensor& h_prev, const DcbParams& p,
                      bool eq2_literal = false);

/// Folds dcb_forward over `blocks` (m >= 1), returning every trace in order.
DcbOutput dcb_stack(const Tensor& x, const Tensor& h_prev, const std::vector<DcbParams>& blocks,
                    bool eq2_literal = false);

CellState convlstm_gates(const Tensor& x_in, const Tensor& h_in, const Tensor& c_prev,
                         const GateParams& p);

struct CellOptions {
  bool use_dcb = true;
  bool eq2_literal = false;
};

struct CellStep {
  CellState state;
  std::vector<DcbTrace> traces;  // empty when the DCB is bypassed
};

/// DCB stack followed by the gate update; with use_dcb=false this is a plain ConvLSTM cell.
CellStep modernn_cell(const Tensor& x, const CellState& state, const std::vector<DcbParams>& dcb,
                      const GateParams& gates, CellOptions opts = {});

// Initializers.
void init_uniform(Tensor& t, double bound, std::mt19937_64& rng);
DcbParams init_dcb(std::size_t channels, const std::vector<int>& kernel_set, double scale_s,
                   AttnChannels attn, std::mt19937_64& rng, double bound = 0.01);
GateParams init_gates(std::size_t channels, std::mt19937_64& rng, double forget_bias = 1.0);

}  // namespace modelab
