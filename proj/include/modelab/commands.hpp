// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// The modelab command set. Each command reads a resolved RunConfig, writes
// its outputs (plus the resolved config) and prints a short summary.

#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "modelab/metrics.hpp"
#include "modelab/run_config.hpp"

namespace modelab {

inline constexpr double kReferenceParamCount = 4.590e6;
inline constexpr const char* kPartialMarker = "run.partial";
inline constexpr const char* kResolvedConfigFile = "config.json";

void cmd_gen_data(const RunConfig& cfg, std::ostream& out);
void cmd_train(const RunConfig& cfg, bool resume, std::ostream& out, std::size_t stop_after = 0);
MetricReport cmd_eval(const RunConfig& cfg, std::ostream& out);
void cmd_predict(const RunConfig& cfg, std::ostream& out);
void cmd_dump_attention(const RunConfig& cfg, std::ostream& out);
void cmd_count_params(const RunConfig& cfg, bool sweep, std::ostream& out);

struct SweepRow {
  std::size_t dcb_blocks = 0;
  std::size_t attn_out_channels = 0;
  std::size_t total = 0;
  double deviation = 0.0;  // (total - reference) / reference
};

/// m in 1..4 x attention channels in {1, C} around `base`.
std::vector<SweepRow> param_sweep(const ModelConfig& base);

/// [B, Ca, H, W] -> [B, 1, H, W] mean over channels.
Tensor channel_mean(const Tensor& map);

struct MaskSplit {
  double occupied_mean = 0.0;
  double background_mean = 0.0;
  std::size_t occupied = 0;
  std::size_t background = 0;
};

/// Splits map values by mask > 0.5.
MaskSplit mask_split(std::span<const double> map, std::span<const double> mask);

std::uint64_t fnv1a64(const std::string& bytes);

/// Parses argv-style arguments (without the program name) and runs the
/// command. Failures print one JSON line to `err` and return nonzero.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace modelab
