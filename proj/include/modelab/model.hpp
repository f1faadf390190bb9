// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Encoder -> stacked recurrent layers -> decoder, unrolled over a sequence.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "modelab/cells.hpp"
#include "modelab/data.hpp"
#include "modelab/tensor.hpp"

namespace modelab {

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t hidden_channels = 64;
  std::size_t frame_channels = 1;
  std::size_t frame_height = 64;
  std::size_t frame_width = 64;
  std::vector<int> kernel_set{3, 5, 7};
  std::size_t dcb_blocks = 1;  // m, stacked blocks per layer
  double scale_s = 2.0;
  AttnChannels attn_channels = AttnChannels::kFull;
  bool use_dcb = true;
  bool use_layer_norm = true;
  bool eq2_literal = false;
  double layer_norm_eps = 1e-5;
  std::size_t input_len = 10;  // T
  std::size_t pred_len = 10;   // K

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct LayerParams {
  std::vector<DcbParams> dcb;  // empty when the DCB is disabled
  GateParams gates;
  Tensor norm_gamma, norm_beta;  // undefined without layer normalization
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  /// All-zero parameters (layer-norm gamma set to 1).
  static Model zeros(const ModelConfig& config);
  /// Default initialization (fan-in uniform gates, small DCB weights, forget bias 1).
  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  /// Copies share parameter storage; clone() makes an independent deep copy.
  Model clone() const;

  Tensor encoder_weight, encoder_bias;  // [C, Cf, 1, 1], [C]
  Tensor decoder_weight, decoder_bias;  // [Cf, C, 1, 1], [Cf]
  std::vector<LayerParams> layers;

  /// Every parameter in a fixed, name-addressable order.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_floats() const;
  void set_requires_grad(bool flag);
  void zero_grad();

  /// 1x1 convolution frame -> features.
  Tensor encode(const Tensor& frame) const;
  /// 1x1 convolution features -> frame; `clamp` gives a detached [0,1] image.
  Tensor decode(const Tensor& h, bool clamp = false) const;

 private:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  ModelConfig config_;
};

enum class RunMode { kTrain, kEval };

struct ForwardOptions {
  RunMode mode = RunMode::kEval;
  double teacher_prob = 0.0;  // chance a post-warm-up input is ground truth (training only)
  std::uint64_t seed = 0;
  bool keep_traces = false;
  /// Called with (step t >= 1, input frame, per-sample ground-truth flags).
  std::function<void(std::size_t, const Tensor&, const std::vector<bool>&)> input_tap;
};

struct ForwardResult {
  std::size_t input_len = 0;
  std::size_t pred_len = 0;
  /// outputs[j] is the raw decoder output at step j+1, predicting frame j+2
  /// (1-based); the last K entries are the future predictions.
  std::vector<Tensor> outputs;
  /// traces[step][layer][block], filled when keep_traces is set.
  std::vector<std::vector<std::vector<DcbTrace>>> traces;

  std::span<const Tensor> future() const;
  std::span<const Tensor> warmup() const;
  /// Detached [B, K, Cf, H, W] stack of the future predictions.
  Tensor predictions(bool clamp = false) const;
};

/// Runs steps t = 1..T+K-1. Inputs are ground truth up to T, then the previous
/// prediction, or (training only) ground truth with probability teacher_prob.
/// Evaluation never reads frames beyond T.
ForwardResult forward_sequence(const Model& model, const SequenceBatch& batch, const ForwardOptions& opts);

struct ParamBreakdown {
  std::size_t encoder = 0;
  std::size_t decoder = 0;
  std::size_t gates_per_layer = 0;
  std::size_t dcb_per_layer = 0;
  std::size_t norm_per_layer = 0;
  std::size_t layers = 0;
  std::size_t total = 0;

  std::size_t per_layer() const { return gates_per_layer + dcb_per_layer + norm_per_layer; }
};

ParamBreakdown count_params(const ModelConfig& config);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "MDCK" | version | config JSON (length-prefixed) | u32 record count | (name, tensor)*.
std::string encode_model(const Model& model);
Model decode_model(const std::string& bytes);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace modelab
