// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "modelab/serialize.hpp"

namespace modelab {

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (num_layers == 0 || hidden_channels == 0 || frame_channels == 0 || frame_height == 0 ||
      frame_width == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (input_len == 0 || pred_len == 0) throw std::invalid_argument("input_len and pred_len must be positive");
  if (use_dcb) {
    if (dcb_blocks == 0) throw std::invalid_argument("dcb_blocks must be at least 1 when the DCB is enabled");
    if (kernel_set.empty()) throw std::invalid_argument("kernel_set must not be empty");
    for (std::size_t i = 0; i < kernel_set.size(); ++i) {
      if (kernel_set[i] <= 0 || kernel_set[i] % 2 == 0)
        throw std::invalid_argument("kernel sizes must be positive and odd");
      if (i && kernel_set[i] <= kernel_set[i - 1]) throw std::invalid_argument("kernel_set must be strictly increasing");
    }
    if (!(scale_s > 0)) throw std::invalid_argument("scale_s must be positive");
  }
  if (!(layer_norm_eps > 0)) throw std::invalid_argument("layer_norm_eps must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},
                     {"hidden_channels", c.hidden_channels},
                     {"frame_channels", c.frame_channels},
                     {"frame_height", c.frame_height},
                     {"frame_width", c.frame_width},
                     {"kernel_set", c.kernel_set},
                     {"dcb_blocks", c.dcb_blocks},
                     {"scale_s", c.scale_s},
                     {"attn_channels", c.attn_channels == AttnChannels::kFull ? "full" : "single"},
                     {"use_dcb", c.use_dcb},
                     {"use_layer_norm", c.use_layer_norm},
                     {"eq2_literal", c.eq2_literal},
                     {"layer_norm_eps", c.layer_norm_eps},
                     {"input_len", c.input_len},
                     {"pred_len", c.pred_len}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known{"num_layers", "hidden_channels", "frame_channels", "frame_height",
                                           "frame_width", "kernel_set", "dcb_blocks", "scale_s",
                                           "attn_channels", "use_dcb", "use_layer_norm", "eq2_literal",
                                           "layer_norm_eps", "input_len", "pred_len"};
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw std::invalid_argument("unknown model config key: " + it.key());
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("num_layers", c.num_layers);
  get("hidden_channels", c.hidden_channels);
  get("frame_channels", c.frame_channels);
  get("frame_height", c.frame_height);
  get("frame_width", c.frame_width);
  get("kernel_set", c.kernel_set);
  get("dcb_blocks", c.dcb_blocks);
  get("scale_s", c.scale_s);
  get("use_dcb", c.use_dcb);
  get("use_layer_norm", c.use_layer_norm);
  get("eq2_literal", c.eq2_literal);
  get("layer_norm_eps", c.layer_norm_eps);
  get("input_len", c.input_len);
  get("pred_len", c.pred_len);
  if (j.contains("attn_channels")) {
    auto mode = j.at("attn_channels").get<std::string>();
    if (mode == "full") {
      c.attn_channels = AttnChannels::kFull;
    } else if (mode == "single") {
      c.attn_channels = AttnChannels::kSingle;
    } else {
      throw std::invalid_argument("attn_channels must be \"full\" or \"single\", got \"" + mode + "\"");
    }
  }
}

// ---------------------------------------------------------------------------
// Model

Model Model::zeros(const ModelConfig& config) {
  config.validate();
  Model m(config);
  const std::size_t C = config.hidden_channels, Cf = config.frame_channels;
  m.encoder_weight = Tensor::zeros({C, Cf, 1, 1});
  m.encoder_bias = Tensor::zeros({C});
  m.decoder_weight = Tensor::zeros({Cf, C, 1, 1});
  m.decoder_bias = Tensor::zeros({Cf});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    LayerParams lp;
    if (config.use_dcb)
      for (std::size_t j = 0; j < config.dcb_blocks; ++j)
        lp.dcb.push_back(DcbParams::zeros(C, config.kernel_set, config.scale_s, config.attn_channels));
    lp.gates = GateParams::zeros(C);
    if (config.use_layer_norm) {
      lp.norm_gamma = Tensor::full({C}, 1.0);
      lp.norm_beta = Tensor::zeros({C});
    }
    m.layers.push_back(std::move(lp));
  }
  return m;
}

Model Model::initialize(const ModelConfig& config, std::uint64_t seed) {
  Model m = zeros(config);
  std::mt19937_64 rng(seed);
  const std::size_t C = config.hidden_channels, Cf = config.frame_channels;
  init_uniform(m.encoder_weight, 1.0 / std::sqrt(static_cast<double>(Cf)), rng);
  init_uniform(m.encoder_bias, 1.0 / std::sqrt(static_cast<double>(Cf)), rng);
  for (auto& lp : m.layers) {
    for (auto& block : lp.dcb)
      block = init_dcb(C, config.kernel_set, config.scale_s, config.attn_channels, rng);
    lp.gates = init_gates(C, rng);
  }
  init_uniform(m.decoder_weight, 1.0 / std::sqrt(static_cast<double>(C)), rng);
  init_uniform(m.decoder_bias, 1.0 / std::sqrt(static_cast<double>(C)), rng);
  return m;
}

Model Model::clone() const { return decode_model(encode_model(*this)); }

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out{{"encoder.weight", encoder_weight}, {"encoder.bias", encoder_bias}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lp = layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    for (std::size_t j = 0; j < lp.dcb.size(); ++j) {
      const std::string bp = prefix + "dcb." + std::to_string(j) + ".";
      for (int k : lp.dcb[j].kernel_set) out.push_back({bp + "w_h." + std::to_string(k), lp.dcb[j].w_h.at(k)});
      for (int k : lp.dcb[j].kernel_set) out.push_back({bp + "w_x." + std::to_string(k), lp.dcb[j].w_x.at(k)});
    }
    out.push_back({prefix + "gates.w_x", lp.gates.w_x});
    out.push_back({prefix + "gates.w_h", lp.gates.w_h});
    out.push_back({prefix + "gates.bias", lp.gates.bias});
    if (lp.norm_gamma.defined()) {
      out.push_back({prefix + "norm.gamma", lp.norm_gamma});
      out.push_back({prefix + "norm.beta", lp.norm_beta});
    }
  }
  out.push_back({"decoder.weight", decoder_weight});
  out.push_back({"decoder.bias", decoder_bias});
  return out;
}

std::size_t Model::parameter_floats() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void Model::set_requires_grad(bool flag) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(flag);
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

Tensor Model::encode(const Tensor& frame) const {
  if (frame.ndim() != 4 || frame.dim(1) != config_.frame_channels)
    throw ShapeError("encode: frame " + shape_str(frame.shape()) + " does not have " +
                     std::to_string(config_.frame_channels) + " channels");
  return conv2d(frame, encoder_weight, encoder_bias);
}

Tensor Model::decode(const Tensor& h, bool clamp) const {
  if (h.ndim() != 4 || h.dim(1) != config_.hidden_channels)
    throw ShapeError("decode: features " + shape_str(h.shape()) + " do not have " +
                     std::to_string(config_.hidden_channels) + " channels");
  Tensor out = conv2d(h, decoder_weight, decoder_bias);
  return clamp ? clamped(out) : out;
}

// ---------------------------------------------------------------------------
// Unrolled forward

std::span<const Tensor> ForwardResult::future() const {
  return std::span<const Tensor>(outputs).subspan(outputs.size() - pred_len, pred_len);
}

std::span<const Tensor> ForwardResult::warmup() const {
  return std::span<const Tensor>(outputs).first(outputs.size() - pred_len);
}

Tensor ForwardResult::predictions(bool clamp) const {
  auto fut = future();
  const auto& fs = fut.front().shape();
  const std::size_t B = fs[0], per = fs[1] * fs[2] * fs[3], K = fut.size();
  std::vector<double> out(B * K * per);
  for (std::size_t k = 0; k < K; ++k) {
    auto d = fut[k].data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < per; ++j) {
        double v = d[b * per + j];
        out[(b * K + k) * per + j] = clamp ? std::clamp(v, 0.0, 1.0) : v;
      }
  }
  return Tensor::from_data({B, K, fs[1], fs[2], fs[3]}, std::move(out));
}

ForwardResult forward_sequence(const Model& model, const SequenceBatch& batch, const ForwardOptions& opts) {
  const auto& cfg = model.config();
  if (!(opts.teacher_prob >= 0.0 && opts.teacher_prob <= 1.0))
    throw std::invalid_argument("teacher_prob must lie in [0,1]");
  if (opts.mode == RunMode::kEval && opts.teacher_prob > 0.0)
    throw std::invalid_argument("evaluation is closed-loop: teacher_prob must be 0");
  const auto& fs = batch.frames.shape();
  if (fs.size() != 5 || fs[2] != cfg.frame_channels || fs[3] != cfg.frame_height || fs[4] != cfg.frame_width)
    throw ShapeError("forward_sequence: batch frames " + shape_str(fs) + " do not match the model frame shape");
  if (batch.input_len != cfg.input_len || batch.pred_len != cfg.pred_len || fs[1] != cfg.input_len + cfg.pred_len)
    throw std::invalid_argument("forward_sequence: batch split " + std::to_string(batch.input_len) + "+" +
                                std::to_string(batch.pred_len) + " does not match model " +
                                std::to_string(cfg.input_len) + "+" + std::to_string(cfg.pred_len));

  const std::size_t B = fs[0], T = cfg.input_len, K = cfg.pred_len;
  const Shape state_shape{B, cfg.hidden_channels, cfg.frame_height, cfg.frame_width};
  std::vector<CellState> states(cfg.num_layers, CellState::zeros(state_shape));
  const CellOptions cell_opts{cfg.use_dcb, cfg.eq2_literal};

  ForwardResult result;
  result.input_len = T;
  result.pred_len = K;
  std::mt19937_64 rng(opts.seed);
  Tensor prev;

  for (std::size_t t = 1; t <= T + K - 1; ++t) {
    Tensor input;
    std::vector<bool> teacher(B, t <= T);
    if (t <= T) {
      input = batch.frame(t - 1);
    } else if (opts.mode == RunMode::kTrain) {
      for (std::size_t b = 0; b < B; ++b)
        teacher[b] = static_cast<double>(rng() >> 11) * 0x1.0p-53 < opts.teacher_prob;
      bool all = std::all_of(teacher.begin(), teacher.end(), [](bool v) { return v; });
      bool none = std::none_of(teacher.begin(), teacher.end(), [](bool v) { return v; });
      if (all) {
        input = batch.frame(t - 1);
      } else if (none) {
        input = prev;
      } else {
        input = select_batch(teacher, batch.frame(t - 1), prev);
      }
    } else {
      input = prev;
    }
    if (opts.input_tap) opts.input_tap(t, input, teacher);

    Tensor x = model.encode(input);
    std::vector<std::vector<DcbTrace>> step_traces;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const auto& lp = model.layers[l];
      CellStep step = modernn_cell(x, states[l], lp.dcb, lp.gates, cell_opts);
      states[l] = step.state;
      x = cfg.use_layer_norm ? layer_norm(step.state.h, lp.norm_gamma, lp.norm_beta, cfg.layer_norm_eps)
                             : step.state.h;
      if (opts.keep_traces) step_traces.push_back(std::move(step.traces));
    }
    prev = model.decode(x);
    result.outputs.push_back(prev);
    if (opts.keep_traces) result.traces.push_back(std::move(step_traces));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Parameter accounting

ParamBreakdown count_params(const ModelConfig& config) {
  config.validate();
  const std::size_t C = config.hidden_channels, Cf = config.frame_channels;
  ParamBreakdown p;
  p.layers = config.num_layers;
  p.encoder = C * Cf + C;
  p.decoder = Cf * C + Cf;
  const std::size_t k5 = GateParams::kKernel * GateParams::kKernel;
  p.gates_per_layer = 8 * C * C * k5 + 4 * C;
  if (config.use_dcb) {
    const std::size_t co = config.attn_channels == AttnChannels::kFull ? C : 1;
    std::size_t per_block = 0;
    for (int k : config.kernel_set) per_block += 2 * co * C * static_cast<std::size_t>(k * k);
    p.dcb_per_layer = config.dcb_blocks * per_block;
  }
  p.norm_per_layer = config.use_layer_norm ? 2 * C : 0;
  p.total = p.encoder + p.decoder + p.layers * p.per_layer();
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string encode_model(const Model& model) {
  std::ostringstream os;
  io::write_magic(os, "MDCK");
  io::write_u32(os, kCheckpointVersion);
  io::write_string(os, nlohmann::json(model.config()).dump());
  auto params = model.parameters();
  io::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::write_string(os, p.name);
    write_tensor(os, p.tensor);
  }
  return os.str();
}

Model decode_model(const std::string& bytes) {
  std::istringstream is(bytes);
  io::expect_magic(is, "MDCK");
  if (auto v = io::read_u32(is); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  ModelConfig config;
  try {
    config = nlohmann::json::parse(io::read_string(is)).get<ModelConfig>();
    config.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  Model model = Model::zeros(config);
  auto params = model.parameters();
  std::uint32_t n = io::read_u32(is);
  if (n != params.size())
    throw FormatError("checkpoint has " + std::to_string(n) + " tensors, config implies " +
                      std::to_string(params.size()));
  for (auto& p : params) {
    std::string name = io::read_string(is, 4096);
    if (name != p.name) throw FormatError("checkpoint tensor \"" + name + "\" where \"" + p.name + "\" expected");
    Tensor t = read_tensor(is);
    if (t.shape() != p.tensor.shape())
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) + ", config implies " +
                        shape_str(p.tensor.shape()));
    std::copy(t.data().begin(), t.data().end(), p.tensor.mutable_data().begin());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint records");
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) { io::atomic_write(path, encode_model(model)); }

Model load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

}  // namespace modelab
