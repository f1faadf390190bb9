// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/run_config.hpp"

#include <fstream>
#include <set>

#include "modelab/serialize.hpp"

namespace modelab {
namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError(std::string("unknown ") + section + " config key: " + it.key());
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) j.at(key).get_to(field);
}

}  // namespace

EvalConfig EvalSection::eval_config() const {
  EvalConfig c;
  c.batch_size = batch_size;
  if (error_convention == "sum") {
    c.error_convention = ErrorConvention::kSum;
  } else if (error_convention == "mean") {
    c.error_convention = ErrorConvention::kMean;
  } else {
    throw ConfigError("eval.error_convention must be \"sum\" or \"mean\", got \"" + error_convention + "\"");
  }
  return c;
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"source", c.source},
                     {"mnist_images", c.mnist_images},
                     {"mnist_labels", c.mnist_labels},
                     {"count", c.count},
                     {"seed", c.seed},
                     {"size", c.size},
                     {"num_objects", c.num_objects},
                     {"seq_len", c.seq_len},
                     {"input_len", c.input_len},
                     {"speed_min", c.speed_min},
                     {"speed_max", c.speed_max},
                     {"sprite_size", c.sprite_size},
                     {"write_masks", c.write_masks}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  reject_unknown(j,
                 {"source", "mnist_images", "mnist_labels", "count", "seed", "size", "num_objects", "seq_len",
                  "input_len", "speed_min", "speed_max", "sprite_size", "write_masks"},
                 "data");
  get_if(j, "source", c.source);
  get_if(j, "mnist_images", c.mnist_images);
  get_if(j, "mnist_labels", c.mnist_labels);
  get_if(j, "count", c.count);
  get_if(j, "seed", c.seed);
  get_if(j, "size", c.size);
  get_if(j, "num_objects", c.num_objects);
  get_if(j, "seq_len", c.seq_len);
  get_if(j, "input_len", c.input_len);
  get_if(j, "speed_min", c.speed_min);
  get_if(j, "speed_max", c.speed_max);
  get_if(j, "sprite_size", c.sprite_size);
  get_if(j, "write_masks", c.write_masks);
}

void to_json(nlohmann::json& j, const EvalSection& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"error_convention", c.error_convention},
                     {"max_sequences", c.max_sequences},
                     {"layer", c.layer},
                     {"step", c.step}};
}

void from_json(const nlohmann::json& j, EvalSection& c) {
  reject_unknown(j, {"batch_size", "error_convention", "max_sequences", "layer", "step"}, "eval");
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "error_convention", c.error_convention);
  get_if(j, "max_sequences", c.max_sequences);
  get_if(j, "layer", c.layer);
  get_if(j, "step", c.step);
}

void to_json(nlohmann::json& j, const PathsConfig& c) {
  j = nlohmann::json{{"store", c.store},
                     {"val_store", c.val_store},
                     {"run_dir", c.run_dir},
                     {"checkpoint", c.checkpoint},
                     {"out_dir", c.out_dir},
                     {"masks", c.masks}};
}

void from_json(const nlohmann::json& j, PathsConfig& c) {
  reject_unknown(j, {"store", "val_store", "run_dir", "checkpoint", "out_dir", "masks"}, "paths");
  get_if(j, "store", c.store);
  get_if(j, "val_store", c.val_store);
  get_if(j, "run_dir", c.run_dir);
  get_if(j, "checkpoint", c.checkpoint);
  get_if(j, "out_dir", c.out_dir);
  get_if(j, "masks", c.masks);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"train", c.train},
                     {"data", c.data},
                     {"eval", c.eval},
                     {"paths", c.paths},
                     {"deterministic", c.deterministic}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  reject_unknown(j, {"model", "train", "data", "eval", "paths", "deterministic"}, "run");
  get_if(j, "model", c.model);
  get_if(j, "train", c.train);
  get_if(j, "data", c.data);
  get_if(j, "eval", c.eval);
  get_if(j, "paths", c.paths);
  get_if(j, "deterministic", c.deterministic);
}

void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config " + (where.empty() ? "root" : where) + " must be a JSON object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key: " + key);
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json patch = value;
  std::size_t end = path.size();
  while (true) {
    const auto dot = path.rfind('.', end - 1);
    const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    if (key.empty()) throw ConfigError("empty key segment in override: " + assignment);
    patch = nlohmann::json{{key, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_strict(doc, patch);
}

RunConfig resolve_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  nlohmann::json doc = RunConfig{};
  if (!file.empty()) {
    std::string text;
    try {
      text = io::read_file(file);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    nlohmann::json loaded = nlohmann::json::parse(text, nullptr, false);
    if (loaded.is_discarded()) throw ConfigError("config file is not valid JSON: " + file.string());
    merge_strict(doc, loaded);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  try {
    return doc.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace modelab
