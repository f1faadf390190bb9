// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "modelab/serialize.hpp"

namespace modelab {
namespace {

const char* sampling_name(SamplingMode m) {
  switch (m) {
    case SamplingMode::kLinear:
      return "linear";
    case SamplingMode::kTeacherForcing:
      return "teacher_forcing";
    case SamplingMode::kClosedLoop:
      return "closed_loop";
  }
  return "linear";
}

// Independent seed streams derived from TrainConfig::seed.
constexpr std::uint64_t kBatchStream = 1;
constexpr std::uint64_t kSamplingStream = 2;

}  // namespace

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("betas must lie in [0,1)");
  if (!(eps > 0)) throw std::invalid_argument("eps must be positive");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (!(lambda_l1 >= 0) || !(lambda_l2 >= 0) || (lambda_l1 == 0 && lambda_l2 == 0))
    throw std::invalid_argument("loss weights must be non-negative and not both zero");
  if (!(clip_grad_norm >= 0)) throw std::invalid_argument("clip_grad_norm must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"max_iterations", c.max_iterations},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"weight_decay", c.weight_decay},
                     {"sampling_mode", sampling_name(c.sampling_mode)},
                     {"sampling_stop_iter", c.sampling_stop_iter},
                     {"lambda_l1", c.lambda_l1},
                     {"lambda_l2", c.lambda_l2},
                     {"supervise_warmup", c.supervise_warmup},
                     {"lr_schedule", c.lr_schedule == LrSchedule::kCosine ? "cosine" : "constant"},
                     {"clip_grad_norm", c.clip_grad_norm},
                     {"checkpoint_every", c.checkpoint_every},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known{
      "learning_rate", "batch_size", "max_iterations", "beta1", "beta2", "eps", "weight_decay", "sampling_mode",
      "sampling_stop_iter", "lambda_l1", "lambda_l2", "supervise_warmup", "lr_schedule", "clip_grad_norm",
      "checkpoint_every", "seed"};
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw std::invalid_argument("unknown train config key: " + it.key());
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("max_iterations", c.max_iterations);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("eps", c.eps);
  get("weight_decay", c.weight_decay);
  get("sampling_stop_iter", c.sampling_stop_iter);
  get("lambda_l1", c.lambda_l1);
  get("lambda_l2", c.lambda_l2);
  get("supervise_warmup", c.supervise_warmup);
  get("clip_grad_norm", c.clip_grad_norm);
  get("checkpoint_every", c.checkpoint_every);
  get("seed", c.seed);
  if (j.contains("sampling_mode")) {
    auto s = j.at("sampling_mode").get<std::string>();
    if (s == "linear") {
      c.sampling_mode = SamplingMode::kLinear;
    } else if (s == "teacher_forcing") {
      c.sampling_mode = SamplingMode::kTeacherForcing;
    } else if (s == "closed_loop") {
      c.sampling_mode = SamplingMode::kClosedLoop;
    } else {
      throw std::invalid_argument("unknown sampling_mode \"" + s + "\"");
    }
  }
  if (j.contains("lr_schedule")) {
    auto s = j.at("lr_schedule").get<std::string>();
    if (s == "constant") {
      c.lr_schedule = LrSchedule::kConstant;
    } else if (s == "cosine") {
      c.lr_schedule = LrSchedule::kCosine;
    } else {
      throw std::invalid_argument("unknown lr_schedule \"" + s + "\"");
    }
  }
}

void to_json(nlohmann::json& j, const LogRecord& r) {
  j = nlohmann::json{{"iteration", r.iteration}, {"loss", r.loss},           {"l1", r.l1},
                     {"l2", r.l2},               {"teacher_prob", r.teacher_prob}, {"seconds", r.seconds}};
}

// ---------------------------------------------------------------------------
// Loss

LossTerms loss_terms(const Tensor& pred, const Tensor& target, double lambda_l1, double lambda_l2) {
  if (pred.shape() != target.shape())
    throw ShapeError("loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  Tensor diff = sub(pred, target);
  LossTerms t;
  t.l1 = mean(abs(diff));
  t.l2 = mean(square(diff));
  t.total = add(scale(t.l1, lambda_l1), scale(t.l2, lambda_l2));
  return t;
}

Tensor loss_l1_l2(const Tensor& pred, const Tensor& target, double lambda_l1, double lambda_l2) {
  return loss_terms(pred, target, lambda_l1, lambda_l2).total;
}

LossTerms sequence_loss(const ForwardResult& result, const SequenceBatch& batch, const TrainConfig& cfg) {
  const std::size_t first = cfg.supervise_warmup ? 0 : result.outputs.size() - result.pred_len;
  LossTerms acc;
  std::size_t n = 0;
  for (std::size_t j = first; j < result.outputs.size(); ++j) {
    // outputs[j] predicts 0-based frame j+1
    LossTerms t = loss_terms(result.outputs[j], batch.frame(j + 1), cfg.lambda_l1, cfg.lambda_l2);
    if (!acc.total.defined()) {
      acc = t;
    } else {
      acc.total = add(acc.total, t.total);
      acc.l1 = add(acc.l1, t.l1);
      acc.l2 = add(acc.l2, t.l2);
    }
    ++n;
  }
  const double inv = 1.0 / static_cast<double>(n);
  return {scale(acc.total, inv), scale(acc.l1, inv), scale(acc.l2, inv)};
}

// ---------------------------------------------------------------------------
// AdamW

void adamw_step(std::span<Tensor> params, OptimizerState& state, const AdamWConfig& cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw std::invalid_argument("adamw_step: parameter " + std::to_string(i) + " has no gradient");
    for (double g : params[i].grad())
      if (!std::isfinite(g))
        throw TrainingError("adamw_step: non-finite gradient in parameter " + std::to_string(i));
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adamw_step: optimizer state does not match parameters");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      theta[k] = theta[k] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps) -
                 cfg.learning_rate * cfg.weight_decay * theta[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Schedules

double sampling_probability(std::size_t iteration, const TrainConfig& cfg) {
  switch (cfg.sampling_mode) {
    case SamplingMode::kTeacherForcing:
      return 1.0;
    case SamplingMode::kClosedLoop:
      return 0.0;
    case SamplingMode::kLinear:
      break;
  }
  const std::size_t stop = cfg.sampling_stop_iter ? cfg.sampling_stop_iter : cfg.max_iterations / 2;
  if (stop == 0 || iteration >= stop) return 0.0;
  return std::max(0.0, 1.0 - static_cast<double>(iteration) / static_cast<double>(stop));
}

double learning_rate_at(std::size_t iteration, const TrainConfig& cfg) {
  if (cfg.lr_schedule == LrSchedule::kConstant || cfg.max_iterations == 0) return cfg.learning_rate;
  double frac = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(cfg.max_iterations));
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---------------------------------------------------------------------------
// Optimizer state files: "MDOP" | version | iteration u64 | step u64 | count u32 | (name, m, v)*

void save_optimizer_state(const std::filesystem::path& path, const Model& model, const OptimizerState& state,
                          std::size_t iteration) {
  auto params = model.parameters();
  std::ostringstream os;
  io::write_magic(os, "MDOP");
  io::write_u32(os, 1);
  io::write_u64(os, iteration);
  io::write_u64(os, state.step);
  const bool has_moments = !state.m.empty();
  io::write_u32(os, has_moments ? static_cast<std::uint32_t>(params.size()) : 0);
  if (has_moments) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      io::write_string(os, params[i].name);
      write_tensor(os, Tensor::from_data(params[i].tensor.shape(), state.m[i]));
      write_tensor(os, Tensor::from_data(params[i].tensor.shape(), state.v[i]));
    }
  }
  io::atomic_write(path, os.str());
}

std::size_t load_optimizer_state(const std::filesystem::path& path, const Model& model, OptimizerState& state) {
  std::istringstream is(io::read_file(path));
  io::expect_magic(is, "MDOP");
  if (auto v = io::read_u32(is); v != 1) throw FormatError("unsupported optimizer state version " + std::to_string(v));
  const std::size_t iteration = io::read_u64(is);
  OptimizerState loaded;
  loaded.step = io::read_u64(is);
  auto params = model.parameters();
  std::uint32_t n = io::read_u32(is);
  if (n != 0 && n != params.size()) throw FormatError("optimizer state does not match the model parameters");
  for (std::uint32_t i = 0; i < n; ++i) {
    if (io::read_string(is, 4096) != params[i].name) throw FormatError("optimizer state parameter order mismatch");
    Tensor m = read_tensor(is), v = read_tensor(is);
    if (m.shape() != params[i].tensor.shape() || v.shape() != params[i].tensor.shape())
      throw FormatError("optimizer moment shape mismatch for " + params[i].name);
    loaded.m.emplace_back(m.data().begin(), m.data().end());
    loaded.v.emplace_back(v.data().begin(), v.data().end());
  }
  state = std::move(loaded);
  return iteration;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

void check_store(const Model& model, const SequenceStore& store) {
  const auto& c = model.config();
  if (store.input_len != c.input_len || store.pred_len() != c.pred_len)
    throw std::invalid_argument("store split " + std::to_string(store.input_len) + "+" +
                                std::to_string(store.pred_len()) + " does not match model " +
                                std::to_string(c.input_len) + "+" + std::to_string(c.pred_len));
  if (store.channels != c.frame_channels || store.height != c.frame_height || store.width != c.frame_width)
    throw std::invalid_argument("store frame shape does not match the model");
}

void copy_parameters(const Model& from, Model& to) {
  auto src = from.parameters();
  auto dst = to.parameters();
  for (std::size_t i = 0; i < src.size(); ++i)
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.mutable_data().begin());
}

void clip_gradients(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double f = max_norm / norm;
  for (auto& p : params)
    for (auto& g : p.mutable_grad()) g *= f;
}

}  // namespace

TrainResult train(Model& model, const SequenceStore& store, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  check_store(model, store);
  if (store.count() == 0) throw std::invalid_argument("training store is empty");

  const bool persist = !opts.run_dir.empty();
  const auto ckpt_path = opts.run_dir / kCheckpointFile;
  const auto opt_path = opts.run_dir / kOptimizerFile;
  const auto log_path = opts.run_dir / kLogFile;

  OptimizerState state;
  TrainResult result;
  if (opts.resume) {
    if (!persist) throw std::invalid_argument("resume requires a run directory");
    Model saved = load_model(ckpt_path);
    if (!(saved.config() == model.config())) throw std::invalid_argument("checkpoint config differs from the model config");
    copy_parameters(saved, model);
    result.start_iteration = load_optimizer_state(opt_path, model, state);
  } else if (persist) {
    std::filesystem::create_directories(opts.run_dir);
    std::ofstream(log_path, std::ios::trunc);
    save_model(model, ckpt_path);
    save_optimizer_state(opt_path, model, state, 0);
  }

  std::vector<Tensor> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  for (auto& p : params) p.set_requires_grad(true);

  BatchIterator batches(store, cfg.batch_size, derive_seed(cfg.seed, kBatchStream));
  const std::uint64_t sampling_seed = derive_seed(cfg.seed, kSamplingStream);
  const auto t0 = std::chrono::steady_clock::now();
  std::ofstream log_os;
  if (persist) log_os.open(log_path, std::ios::app);

  const std::size_t end = opts.stop_after ? std::min(opts.stop_after, cfg.max_iterations) : cfg.max_iterations;
  std::size_t iter = result.start_iteration;
  for (; iter < end; ++iter) {
    SequenceBatch batch = batches.batch_at(iter);
    ForwardOptions fo;
    fo.mode = RunMode::kTrain;
    fo.teacher_prob = sampling_probability(iter, cfg);
    fo.seed = derive_seed(sampling_seed, iter);
    for (auto& p : params) p.zero_grad();
    ForwardResult fr = forward_sequence(model, batch, fo);
    LossTerms loss = sequence_loss(fr, batch, cfg);
    const double value = loss.total.item();
    if (!std::isfinite(value))
      throw TrainingError("non-finite loss at iteration " + std::to_string(iter) + "; last checkpoint retained");
    backward(loss.total);
    if (cfg.clip_grad_norm > 0) clip_gradients(params, cfg.clip_grad_norm);
    AdamWConfig ac{learning_rate_at(iter, cfg), cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    adamw_step(params, state, ac);

    LogRecord rec{iter + 1, value, loss.l1.item(), loss.l2.item(), fo.teacher_prob, 0.0};
    if (opts.record_timing)
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    if (persist) log_os << nlohmann::json(rec).dump() << '\n' << std::flush;
    if (opts.on_log) opts.on_log(rec);
    if (persist && cfg.checkpoint_every && (iter + 1) % cfg.checkpoint_every == 0) {
      save_model(model, ckpt_path);
      save_optimizer_state(opt_path, model, state, iter + 1);
    }
  }
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(false);
  }
  result.final_iteration = iter;
  if (persist) {
    save_model(model, ckpt_path);
    save_optimizer_state(opt_path, model, state, iter);
  }
  return result;
}

double validation_loss(const Model& model, const SequenceStore& store, const TrainConfig& cfg, std::size_t batch_size) {
  check_store(model, store);
  NoGradGuard guard;
  double total = 0.0;
  std::size_t frames = 0;
  for (std::size_t start = 0; start < store.count(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(store.count(), start + batch_size); ++i) idx.push_back(i);
    SequenceBatch batch = make_batch(store, idx);
    ForwardResult fr = forward_sequence(model, batch, {});
    auto fut = fr.future();
    for (std::size_t k = 0; k < fut.size(); ++k) {
      double l = loss_l1_l2(fut[k], batch.frame(batch.input_len + k), cfg.lambda_l1, cfg.lambda_l2).item();
      total += l * static_cast<double>(idx.size());
      frames += idx.size();
    }
  }
  return frames ? total / static_cast<double>(frames) : 0.0;
}

}  // namespace modelab
