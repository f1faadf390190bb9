// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frame-wise image quality metrics and test-store evaluation.
//
// MSE and MAE are per-frame SUMS over pixels (then averaged over frames),
// which is the scale of the usual Moving-MNIST tables; PSNR uses the
// per-pixel mean squared error. Reports echo both conventions.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "modelab/data.hpp"
#include "modelab/model.hpp"
#include "modelab/tensor.hpp"

namespace modelab {

inline constexpr double kPsnrCapDb = 100.0;

double mse_frame(std::span<const double> pred, std::span<const double> target);
double mae_frame(std::span<const double> pred, std::span<const double> target);
double mse_frame(const Tensor& pred, const Tensor& target);
double mae_frame(const Tensor& pred, const Tensor& target);

struct Psnr {
  double db = 0.0;
  bool capped = false;  // identical frames: db is kPsnrCapDb
};

Psnr psnr_frame(std::span<const double> pred, std::span<const double> target, double max_val = 1.0);
Psnr psnr_frame(const Tensor& pred, const Tensor& target, double max_val = 1.0);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03,
/// dynamic range 1) of one height x width plane.
double ssim_plane(std::span<const double> a, std::span<const double> b, std::size_t height, std::size_t width);
/// SSIM of a frame whose last two dims are H, W; leading dims are averaged as channels.
double ssim_frame(const Tensor& pred, const Tensor& target);

enum class ErrorConvention { kSum, kMean };

struct EvalConfig {
  std::size_t batch_size = 8;
  ErrorConvention error_convention = ErrorConvention::kSum;
};

struct MetricReport {
  std::size_t sequences = 0;
  std::size_t horizon = 0;
  std::vector<double> psnr, ssim, mse, mae;  // per horizon step, mean over sequences
  double psnr_mean = 0, ssim_mean = 0, mse_mean = 0, mae_mean = 0;
  std::size_t psnr_capped_frames = 0;
  ErrorConvention error_convention = ErrorConvention::kSum;

  nlohmann::json to_json() const;
  std::string to_table() const;
  std::string to_csv() const;
};

/// Maps a batch whose target frames are hidden (NaN) to [B, K, C, H, W] predictions.
using Predictor = std::function<Tensor(const SequenceBatch& observed)>;

MetricReport evaluate_predictor(const SequenceStore& store, const Predictor& predictor, const EvalConfig& cfg = {});

/// Closed-loop rollout of `model` over `store`, clamped to [0,1].
MetricReport evaluate(const Model& model, const SequenceStore& store, const EvalConfig& cfg = {});

}  // namespace modelab
