// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// L1+L2 objective, AdamW, the scheduled-sampling schedule and the training loop.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "modelab/data.hpp"
#include "modelab/model.hpp"
#include "modelab/tensor.hpp"

namespace modelab {

enum class SamplingMode {
  kLinear,          // p = max(0, 1 - iteration / stop)
  kTeacherForcing,  // p = 1
  kClosedLoop,      // p = 0
};

enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 4;
  std::size_t max_iterations = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  SamplingMode sampling_mode = SamplingMode::kLinear;
  std::size_t sampling_stop_iter = 0;  // 0 means max_iterations / 2
  double lambda_l1 = 1.0;
  double lambda_l2 = 1.0;
  bool supervise_warmup = true;  // loss over all T+K-1 next-frame predictions
  LrSchedule lr_schedule = LrSchedule::kConstant;
  double clip_grad_norm = 0.0;  // 0 disables clipping
  std::size_t checkpoint_every = 0;  // 0: initial and final checkpoints only
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossTerms {
  Tensor total;
  Tensor l1;  // mean |pred - target|
  Tensor l2;  // mean (pred - target)^2
};

LossTerms loss_terms(const Tensor& pred, const Tensor& target, double lambda_l1, double lambda_l2);
Tensor loss_l1_l2(const Tensor& pred, const Tensor& target, double lambda_l1, double lambda_l2);

/// Mean of per-frame loss terms over the supervised steps of a rollout.
LossTerms sequence_loss(const ForwardResult& result, const SequenceBatch& batch, const TrainConfig& cfg);

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// One decoupled-weight-decay Adam update of every tensor in `params` from
/// its grad buffer. Throws (leaving everything untouched) on a missing or
/// non-finite gradient.
void adamw_step(std::span<Tensor> params, OptimizerState& state, const AdamWConfig& cfg);

double sampling_probability(std::size_t iteration, const TrainConfig& cfg);
double learning_rate_at(std::size_t iteration, const TrainConfig& cfg);

struct LogRecord {
  std::size_t iteration = 0;  // updates completed
  double loss = 0, l1 = 0, l2 = 0, teacher_prob = 0, seconds = 0;
};

void to_json(nlohmann::json& j, const LogRecord& r);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::filesystem::path run_dir;  // empty: no files written
  bool resume = false;
  bool record_timing = true;  // false: LogRecord::seconds stays 0 so logs are byte-stable
  std::size_t stop_after = 0;  // nonzero: halt once this many updates are done, as if interrupted
  std::function<void(const LogRecord&)> on_log;
};

struct TrainResult {
  std::size_t start_iteration = 0;
  std::size_t final_iteration = 0;
  std::vector<LogRecord> log;
};

inline constexpr const char* kCheckpointFile = "checkpoint.mdck";
inline constexpr const char* kOptimizerFile = "optimizer.mdop";
inline constexpr const char* kLogFile = "train_log.jsonl";

/// Runs iterations up to cfg.max_iterations, updating `model` in place.
/// With a run directory it writes the initial/periodic/final checkpoints,
/// optimizer state and the JSON-lines log; `resume` continues from them.
TrainResult train(Model& model, const SequenceStore& store, const TrainConfig& cfg, const TrainOptions& opts = {});

void save_optimizer_state(const std::filesystem::path& path, const Model& model, const OptimizerState& state,
                          std::size_t iteration);
/// Returns the saved iteration.
std::size_t load_optimizer_state(const std::filesystem::path& path, const Model& model, OptimizerState& state);

/// Closed-loop L1+L2 loss over the future frames of every sequence in `store`.
double validation_loss(const Model& model, const SequenceStore& store, const TrainConfig& cfg,
                       std::size_t batch_size = 8);

}  // namespace modelab
