// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line run configuration: model, training, data, eval and path
// sections in one JSON document, with dotted-key overrides.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "modelab/metrics.hpp"
#include "modelab/model.hpp"
#include "modelab/training.hpp"

namespace modelab {

struct DataConfig {
  std::string source = "shapes";  // "shapes" or "mnist"
  std::string mnist_images;
  std::string mnist_labels;
  std::size_t count = 8;
  std::uint64_t seed = 0;
  std::size_t size = 64;
  std::size_t num_objects = 2;
  std::size_t seq_len = 20;
  std::size_t input_len = 10;
  double speed_min = 2.0;
  double speed_max = 4.0;
  std::size_t sprite_size = 7;
  bool write_masks = false;  // also write <out>.masks.mdsq with occupancy masks

  bool operator==(const DataConfig&) const = default;
};

struct EvalSection {
  std::size_t batch_size = 8;
  std::string error_convention = "sum";  // "sum" or "mean"
  std::size_t max_sequences = 0;         // predict/dump-attention: 0 means all
  std::size_t layer = 0;                 // dump-attention; 0 means the last layer
  std::size_t step = 0;                  // dump-attention; 0 means the last step

  bool operator==(const EvalSection&) const = default;
  EvalConfig eval_config() const;
};

struct PathsConfig {
  std::string store;       // gen-data output, train/eval/predict input
  std::string val_store;   // optional held-out store for train
  std::string run_dir;     // train output
  std::string checkpoint;  // eval/predict/dump-attention input
  std::string out_dir;     // eval/predict/dump-attention output
  std::string masks;       // dump-attention: optional occupancy-mask store

  bool operator==(const PathsConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalSection eval;
  PathsConfig paths;
  bool deterministic = false;

  bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const EvalSection& c);
void from_json(const nlohmann::json& j, EvalSection& c);
void to_json(nlohmann::json& j, const PathsConfig& c);
void from_json(const nlohmann::json& j, PathsConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Merges `patch` into `base`; every key of `patch` must already exist in `base`.
void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where = "");

/// Applies "a.b.c=value"; the value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults, then the file (if any), then overrides in order.
RunConfig resolve_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace modelab
