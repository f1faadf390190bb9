// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// conv2d via im2col + GEMM. The whole batch goes through one GEMM per
// product; workers only fill and scatter disjoint column blocks, so the
// arithmetic is identical for any worker count.

#include <Eigen/Core>

#include <algorithm>
#include <memory>
#include <vector>

#include "modelab/parallel.hpp"
#include "modelab/tensor.hpp"
#include "tensor_internal.hpp"

namespace modelab {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct ConvGeom {
  std::size_t batch, cin, cout, height, width, k, pad;
  std::size_t hw() const { return height * width; }
  std::size_t patch() const { return cin * k * k; }
};

// cols[(ci*k + ky)*k + kx][y*W + x] = in[ci][y+ky-pad][x+kx-pad], zero outside.
// Rows are `ld` apart so samples can sit side by side in one matrix.
void im2col(const double* in, const ConvGeom& g, double* cols, std::size_t ld) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const long K = static_cast<long>(g.k), P = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (long ky = 0; ky < K; ++ky)
      for (long kx = 0; kx < K; ++kx) {
        double* row = cols + ((ci * g.k + ky) * g.k + kx) * ld;
        const double* plane = in + ci * g.hw();
        for (long y = 0; y < H; ++y) {
          long sy = y + ky - P;
          double* dst = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill_n(dst, W, 0.0);
            continue;
          }
          const double* src = plane + sy * W;
          for (long x = 0; x < W; ++x) {
            long sx = x + kx - P;
            dst[x] = (sx >= 0 && sx < W) ? src[sx] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, std::size_t ld, const ConvGeom& g, double* out) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const long K = static_cast<long>(g.k), P = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (long ky = 0; ky < K; ++ky)
      for (long kx = 0; kx < K; ++kx) {
        const double* row = cols + ((ci * g.k + ky) * g.k + kx) * ld;
        double* plane = out + ci * g.hw();
        for (long y = 0; y < H; ++y) {
          long sy = y + ky - P;
          if (sy < 0 || sy >= H) continue;
          const double* src = row + y * W;
          double* dst = plane + sy * W;
          for (long x = 0; x < W; ++x) {
            long sx = x + kx - P;
            if (sx >= 0 && sx < W) dst[sx] += src[x];
          }
        }
      }
}

// [patch x B*HW] column matrix of the whole batch; sample b owns columns b*HW..
RowMat batch_columns(const double* in, const ConvGeom& g) {
  const std::size_t ld = g.batch * g.hw(), in_per = g.cin * g.hw();
  RowMat cols(g.patch(), ld);
  parallel_for(g.batch, [&](std::size_t b) {
    if (g.k == 1) {
      for (std::size_t c = 0; c < g.cin; ++c)
        std::copy_n(in + b * in_per + c * g.hw(), g.hw(), cols.data() + c * ld + b * g.hw());
    } else {
      im2col(in + b * in_per, g, cols.data() + b * g.hw(), ld);
    }
  });
  return cols;
}

// Forward columns up to this size are kept for the weight gradient instead of
// being rebuilt in backward.
constexpr std::size_t kColumnCacheBytes = std::size_t{32} << 20;

// [B, C, HW] <-> [C, B*HW]
void to_channel_major(const double* src, std::size_t B, std::size_t C, std::size_t hw, double* dst) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) std::copy_n(src + (b * C + c) * hw, hw, dst + c * B * hw + b * hw);
}

void to_batch_major(const double* src, std::size_t B, std::size_t C, std::size_t hw, double* dst) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) std::copy_n(src + c * B * hw + b * hw, hw, dst + (b * C + c) * hw);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(weight, 4, "conv2d", "weight");
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (ws[1] != is[1] || ws[2] != ws[3] || ws[2] % 2 == 0)
    throw ShapeError("conv2d: input " + shape_str(is) + " incompatible with weight " + shape_str(ws) +
                     " (need matching input channels and an odd square kernel)");
  if (bias.defined() && bias.shape() != Shape{ws[0]})
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(ws));

  const ConvGeom g{is[0], is[1], ws[0], is[2], is[3], ws[2], (ws[2] - 1) / 2};
  const std::size_t ld = g.batch * g.hw();
  std::vector<double> out(g.batch * g.cout * g.hw());
  std::shared_ptr<RowMat> kept;
  {
    auto cols = std::make_shared<RowMat>(batch_columns(input.data().data(), g));
    RowMat o = CMapMat(weight.data().data(), g.cout, g.patch()) * *cols;
    if (grad_enabled() && weight.requires_grad() && g.patch() * ld * sizeof(double) <= kColumnCacheBytes)
      kept = std::move(cols);
    if (bias.defined()) {
      auto bv = bias.data();
      for (std::size_t c = 0; c < g.cout; ++c) o.row(c).array() += bv[c];
    }
    to_batch_major(o.data(), g.batch, g.cout, g.hw(), out.data());
  }

  auto ii = input.impl_ptr(), wi = weight.impl_ptr();
  auto bi = bias.defined() ? bias.impl_ptr() : nullptr;
  std::vector<Tensor> deps{input, weight};
  if (bias.defined()) deps.push_back(bias);
  return detail::make_result(
      {g.batch, g.cout, g.height, g.width}, std::move(out), "conv2d", std::move(deps),
      [ii, wi, bi, g, ld, kept](const TensorImpl& o) {
        const bool need_b = bi && bi->requires_grad;
        const bool need_w = wi->requires_grad, need_x = ii->requires_grad;
        if (!need_b && !need_w && !need_x) return;
        RowMat dout(g.cout, ld);
        to_channel_major(o.grad.data(), g.batch, g.cout, g.hw(), dout.data());
        if (need_b) {
          auto gb = bi->grad_buffer();
          for (std::size_t c = 0; c < g.cout; ++c) gb[c] += dout.row(c).sum();
        }
        if (need_w) {
          if (kept) {
            MapMat(wi->grad_buffer().data(), g.cout, g.patch()).noalias() += dout * kept->transpose();
          } else {
            RowMat cols = batch_columns(ii->data.data(), g);
            MapMat(wi->grad_buffer().data(), g.cout, g.patch()).noalias() += dout * cols.transpose();
          }
        }
        if (need_x) {
          RowMat dcols = CMapMat(wi->data.data(), g.cout, g.patch()).transpose() * dout;
          auto gx = ii->grad_buffer();
          const std::size_t in_per = g.cin * g.hw();
          parallel_for(g.batch, [&](std::size_t b) {
            double* dst = gx.data() + b * in_per;
            if (g.k == 1) {
              for (std::size_t c = 0; c < g.cin; ++c) {
                const double* src = dcols.data() + c * ld + b * g.hw();
                for (std::size_t i = 0; i < g.hw(); ++i) dst[c * g.hw() + i] += src[i];
              }
            } else {
              col2im_add(dcols.data() + b * g.hw(), ld, g, dst);
            }
          });
        }
      });
}

}  // namespace modelab
