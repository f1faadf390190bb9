// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "modelab/data.hpp"
#include "modelab/parallel.hpp"
#include "modelab/pgm.hpp"
#include "modelab/serialize.hpp"

namespace fs = std::filesystem;

namespace modelab {
namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::string& require_path(const std::string& value, const char* key) {
  if (value.empty()) throw UsageError(std::string("missing required path: ") + key);
  return value;
}

void write_resolved_config(const fs::path& path, const RunConfig& cfg) {
  io::atomic_write(path, nlohmann::json(cfg).dump(2) + "\n");
}

// Creates `dir` with a marker file that is removed once the command finishes.
class PartialMarker {
 public:
  explicit PartialMarker(const fs::path& dir) : path_(dir / kPartialMarker) {
    fs::create_directories(dir);
    std::ofstream(path_) << "in progress\n";
  }
  void done() { fs::remove(path_); }

 private:
  fs::path path_;
};

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string seq_name(std::size_t i) {
  std::ostringstream os;
  os << "seq_" << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

void check_store_matches(const ModelConfig& m, const SequenceStore& s) {
  if (s.channels != m.frame_channels || s.height != m.frame_height || s.width != m.frame_width ||
      s.input_len != m.input_len || s.pred_len() != m.pred_len) {
    std::ostringstream os;
    os << "store frames " << s.channels << "x" << s.height << "x" << s.width << " split " << s.input_len << "+"
       << s.pred_len() << " do not match model " << m.frame_channels << "x" << m.frame_height << "x"
       << m.frame_width << " split " << m.input_len << "+" << m.pred_len;
    throw UsageError(os.str());
  }
}

std::size_t limited(std::size_t count, std::size_t max) { return max == 0 ? count : std::min(count, max); }

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// gen-data

void cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const fs::path store_path = require_path(cfg.paths.store, "paths.store");
  const auto& d = cfg.data;
  SequenceStore masks;
  SequenceStore store;
  SequenceStore* mask_ptr = d.write_masks ? &masks : nullptr;
  if (d.source == "shapes") {
    ShapesParams p;
    p.size = d.size;
    p.num_digits = d.num_objects;
    p.seq_len = d.seq_len;
    p.input_len = d.input_len;
    p.speed_min = d.speed_min;
    p.speed_max = d.speed_max;
    p.sprite_size = d.sprite_size;
    store = generate_moving_shapes(d.count, d.seed, p, mask_ptr);
  } else if (d.source == "mnist") {
    auto sprites = load_idx(require_path(d.mnist_images, "data.mnist_images"),
                            require_path(d.mnist_labels, "data.mnist_labels"));
    MotionParams p;
    p.size = d.size;
    p.num_digits = d.num_objects;
    p.seq_len = d.seq_len;
    p.input_len = d.input_len;
    p.speed_min = d.speed_min;
    p.speed_max = d.speed_max;
    store = generate_moving_mnist(sprites, d.count, d.seed, p, mask_ptr);
  } else {
    throw ConfigError("data.source must be \"shapes\" or \"mnist\", got \"" + d.source + "\"");
  }
  if (!store_path.parent_path().empty()) fs::create_directories(store_path.parent_path());
  const std::string bytes = encode_sequence_store(store);
  io::atomic_write(store_path, bytes);
  if (mask_ptr) write_sequence_store(fs::path(store_path.string() + ".masks.mdsq"), masks);
  write_resolved_config(fs::path(store_path.string() + ".config.json"), cfg);
  out << "store " << store_path.string() << ": " << store.count() << " sequences, " << store.seq_len << " frames ("
      << store.input_len << "+" << store.pred_len() << ") of " << store.channels << "x" << store.height << "x"
      << store.width << ", checksum " << hex64(fnv1a64(bytes)) << "\n";
}

// ---------------------------------------------------------------------------
// train

void cmd_train(const RunConfig& cfg, bool resume, std::ostream& out, std::size_t stop_after) {
  const fs::path run_dir = require_path(cfg.paths.run_dir, "paths.run_dir");
  SequenceStore store = read_sequence_store(require_path(cfg.paths.store, "paths.store"));
  check_store_matches(cfg.model, store);
  cfg.train.validate();
  PartialMarker marker(run_dir);
  write_resolved_config(run_dir / kResolvedConfigFile, cfg);

  Model model = Model::initialize(cfg.model, cfg.train.seed);
  TrainOptions opts;
  opts.run_dir = run_dir;
  opts.resume = resume;
  opts.record_timing = !cfg.deterministic;
  opts.stop_after = stop_after;
  TrainResult r = train(model, store, cfg.train, opts);

  nlohmann::json summary{{"start_iteration", r.start_iteration},
                         {"final_iteration", r.final_iteration},
                         {"parameters", model.parameter_floats()}};
  if (!r.log.empty()) summary["final_loss"] = r.log.back().loss;
  if (!cfg.paths.val_store.empty()) {
    SequenceStore val = read_sequence_store(cfg.paths.val_store);
    check_store_matches(cfg.model, val);
    summary["val_loss"] = validation_loss(model, val, cfg.train, cfg.eval.batch_size);
  }
  io::atomic_write(run_dir / "summary.json", summary.dump(2) + "\n");
  // A run halted by --stop-after stays marked partial until resumed to the end.
  if (r.final_iteration == cfg.train.max_iterations) marker.done();
  out << "trained iterations " << r.start_iteration << ".." << r.final_iteration;
  if (summary.contains("final_loss")) out << ", final loss " << summary["final_loss"].get<double>();
  if (summary.contains("val_loss")) out << ", validation loss " << summary["val_loss"].get<double>();
  out << ", checkpoint " << (run_dir / kCheckpointFile).string() << "\n";
}

// ---------------------------------------------------------------------------
// eval

MetricReport cmd_eval(const RunConfig& cfg, std::ostream& out) {
  Model model = load_model(require_path(cfg.paths.checkpoint, "paths.checkpoint"));
  SequenceStore store = read_sequence_store(require_path(cfg.paths.store, "paths.store"));
  check_store_matches(model.config(), store);
  const EvalConfig ec = cfg.eval.eval_config();
  MetricReport report = evaluate(model, store, ec);
  if (!cfg.paths.out_dir.empty()) {
    const fs::path dir = cfg.paths.out_dir;
    PartialMarker marker(dir);
    write_resolved_config(dir / kResolvedConfigFile, cfg);
    io::atomic_write(dir / "metrics.json", report.to_json().dump(2) + "\n");
    io::atomic_write(dir / "metrics.csv", report.to_csv());
    marker.done();
  }
  out << report.to_table();
  return report;
}

// ---------------------------------------------------------------------------
// predict

void cmd_predict(const RunConfig& cfg, std::ostream& out) {
  Model model = load_model(require_path(cfg.paths.checkpoint, "paths.checkpoint"));
  SequenceStore store = read_sequence_store(require_path(cfg.paths.store, "paths.store"));
  check_store_matches(model.config(), store);
  const fs::path dir = require_path(cfg.paths.out_dir, "paths.out_dir");
  PartialMarker marker(dir);
  write_resolved_config(dir / kResolvedConfigFile, cfg);

  const std::size_t n = limited(store.count(), cfg.eval.max_sequences);
  const std::size_t T = store.input_len, K = store.pred_len(), C = store.channels;
  const std::size_t H = store.height, W = store.width, F = store.frame_size(), P = H * W;
  const std::size_t cols = std::max(T, K);
  std::vector<double> raw;
  raw.reserve(n * K * F);
  const std::size_t bs = std::max<std::size_t>(1, cfg.eval.batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + bs); ++i) idx.push_back(i);
    SequenceBatch batch = make_batch(store, idx);
    Tensor pred;
    {
      NoGradGuard guard;
      pred = forward_sequence(model, batch, {}).predictions();
    }
    raw.insert(raw.end(), pred.data().begin(), pred.data().end());
    auto pd = pred.data();
    auto fd = batch.frames.data();
    for (std::size_t b = 0; b < idx.size(); ++b)
      for (std::size_t c = 0; c < C; ++c) {
        GrayImage strip(cols * W, 3 * H);
        for (std::size_t t = 0; t < T; ++t) strip.paste(fd.subspan((b * store.seq_len + t) * F + c * P, P), H, W, 0, t * W);
        for (std::size_t k = 0; k < K; ++k) {
          strip.paste(fd.subspan((b * store.seq_len + T + k) * F + c * P, P), H, W, H, k * W);
          strip.paste(pd.subspan((b * K + k) * F + c * P, P), H, W, 2 * H, k * W);
        }
        std::string name = seq_name(idx[b]);
        if (C > 1) name += "_c" + std::to_string(c);
        write_pgm(dir / (name + ".pgm"), strip);
      }
  }
  Tensor all = Tensor::from_data({n, K, C, H, W}, std::move(raw));
  std::ostringstream bytes;
  write_tensor(bytes, all);
  io::atomic_write(dir / "predictions.mdtn", bytes.str());
  marker.done();
  out << "wrote " << n << " prediction strips (" << T << " observed | " << K << " truth | " << K
      << " predicted) and predictions.mdtn to " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// dump-attention

Tensor channel_mean(const Tensor& map) {
  if (map.ndim() != 4) throw ShapeError("channel_mean expects [B,C,H,W], got " + shape_str(map.shape()));
  const std::size_t B = map.dim(0), C = map.dim(1), P = map.dim(2) * map.dim(3);
  std::vector<double> out(B * P, 0.0);
  auto d = map.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < P; ++i) out[b * P + i] += d[(b * C + c) * P + i];
  for (auto& v : out) v /= static_cast<double>(C);
  return Tensor::from_data({B, 1, map.dim(2), map.dim(3)}, std::move(out));
}

MaskSplit mask_split(std::span<const double> map, std::span<const double> mask) {
  if (map.size() != mask.size()) throw ShapeError("mask_split: map and mask sizes differ");
  MaskSplit s;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (mask[i] > 0.5) {
      s.occupied_mean += map[i];
      ++s.occupied;
    } else {
      s.background_mean += map[i];
      ++s.background;
    }
  }
  if (s.occupied) s.occupied_mean /= static_cast<double>(s.occupied);
  if (s.background) s.background_mean /= static_cast<double>(s.background);
  return s;
}

void cmd_dump_attention(const RunConfig& cfg, std::ostream& out) {
  Model model = load_model(require_path(cfg.paths.checkpoint, "paths.checkpoint"));
  const auto& mc = model.config();
  if (!mc.use_dcb) throw UsageError("checkpoint has no detail context blocks (use_dcb=false)");
  SequenceStore store = read_sequence_store(require_path(cfg.paths.store, "paths.store"));
  check_store_matches(mc, store);
  const std::size_t steps = store.seq_len - 1;
  const std::size_t layer = cfg.eval.layer == 0 ? mc.num_layers : cfg.eval.layer;
  const std::size_t step = cfg.eval.step == 0 ? steps : cfg.eval.step;
  if (layer > mc.num_layers) throw UsageError("eval.layer " + std::to_string(layer) + " exceeds num_layers");
  if (step > steps) throw UsageError("eval.step " + std::to_string(step) + " exceeds " + std::to_string(steps));
  std::optional<SequenceStore> masks;
  if (!cfg.paths.masks.empty()) {
    masks = read_sequence_store(cfg.paths.masks);
    if (masks->count() != store.count() || masks->seq_len != store.seq_len || masks->height != store.height ||
        masks->width != store.width)
      throw UsageError("mask store does not match the sequence store");
  }
  const fs::path dir = require_path(cfg.paths.out_dir, "paths.out_dir");
  PartialMarker marker(dir);
  write_resolved_config(dir / kResolvedConfigFile, cfg);

  const std::size_t n = limited(store.count(), cfg.eval.max_sequences);
  const std::size_t H = store.height, W = store.width, P = H * W;
  nlohmann::json maps = nlohmann::json::array();
  const std::size_t bs = std::max<std::size_t>(1, cfg.eval.batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + bs); ++i) idx.push_back(i);
    SequenceBatch batch = make_batch(store, idx);
    ForwardOptions fo;
    fo.keep_traces = true;
    ForwardResult fr;
    {
      NoGradGuard guard;
      fr = forward_sequence(model, batch, fo);
    }
    const auto& blocks = fr.traces.at(step - 1).at(layer - 1);
    for (std::size_t j = 0; j < blocks.size(); ++j)
      for (int which = 0; which < 2; ++which) {
        const char* kind = which == 0 ? "attn_h" : "attn_x";
        Tensor m = channel_mean(which == 0 ? blocks[j].attn_h : blocks[j].attn_x);
        for (std::size_t b = 0; b < idx.size(); ++b) {
          auto plane = m.data().subspan(b * P, P);
          GrayImage img(W, H);
          img.paste(plane, H, W, 0, 0);
          const std::string file = seq_name(idx[b]) + "_" + kind + "_b" + std::to_string(j) + ".pgm";
          write_pgm(dir / file, img);
          double sum = 0.0, lo = plane[0], hi = plane[0];
          for (double v : plane) {
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          nlohmann::json entry{{"file", file},         {"sequence", idx[b]}, {"map", kind},
                               {"block", j},           {"mean", sum / P},    {"min", lo},
                               {"max", hi}};
          if (masks) {
            // The step-t input is frame t (1-based).
            auto seq_mask = masks->sequence(idx[b]);
            std::span<const double> mask(seq_mask.data() + (step - 1) * masks->frame_size(), P);
            MaskSplit s = mask_split(plane, mask);
            entry["occupied_mean"] = s.occupied_mean;
            entry["background_mean"] = s.background_mean;
            entry["occupied_pixels"] = s.occupied;
          }
          maps.push_back(entry);
        }
      }
  }
  nlohmann::json summary{{"layer", layer}, {"step", step}, {"sequences", n}, {"maps", maps}};
  io::atomic_write(dir / "attention.json", summary.dump(2) + "\n");
  marker.done();
  out << "wrote " << maps.size() << " attention maps (layer " << layer << ", step " << step << ") to "
      << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// count-params

std::vector<SweepRow> param_sweep(const ModelConfig& base) {
  std::vector<SweepRow> rows;
  for (std::size_t m = 1; m <= 4; ++m)
    for (AttnChannels a : {AttnChannels::kSingle, AttnChannels::kFull}) {
      ModelConfig c = base;
      c.use_dcb = true;
      c.dcb_blocks = m;
      c.attn_channels = a;
      SweepRow r;
      r.dcb_blocks = m;
      r.attn_out_channels = a == AttnChannels::kFull ? c.hidden_channels : 1;
      r.total = count_params(c).total;
      r.deviation = (static_cast<double>(r.total) - kReferenceParamCount) / kReferenceParamCount;
      rows.push_back(r);
    }
  return rows;
}

void cmd_count_params(const RunConfig& cfg, bool sweep, std::ostream& out) {
  cfg.model.validate();
  const ParamBreakdown b = count_params(cfg.model);
  out << "encoder            " << b.encoder << "\n";
  out << "per layer gates    " << b.gates_per_layer << "\n";
  out << "per layer dcb      " << b.dcb_per_layer << "\n";
  out << "per layer norm     " << b.norm_per_layer << "\n";
  out << "layers             " << b.layers << " x " << b.per_layer() << " = " << b.layers * b.per_layer() << "\n";
  out << "decoder            " << b.decoder << "\n";
  out << "total              " << b.total << "\n";
  if (!sweep) return;
  const auto rows = param_sweep(cfg.model);
  const auto best = std::min_element(rows.begin(), rows.end(), [](const SweepRow& x, const SweepRow& y) {
    return std::fabs(x.deviation) < std::fabs(y.deviation);
  });
  out << "\nsweep against " << std::fixed << std::setprecision(3) << kReferenceParamCount / 1e6 << " M\n";
  out << "m  attn_ch        total  deviation\n";
  for (const auto& r : rows) {
    out << r.dcb_blocks << "  " << std::setw(7) << r.attn_out_channels << "  " << std::setw(11) << r.total << "  "
        << std::showpos << std::setw(8) << std::setprecision(2) << r.deviation * 100.0 << "%" << std::noshowpos
        << (&r == &*best ? "  <- closest" : "") << "\n";
  }
  out << std::defaultfloat;
}

// ---------------------------------------------------------------------------
// argument handling

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"modelab: MoDeRNN spatiotemporal prediction toolkit", "modelab"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--set", overrides, "dotted-key override, e.g. train.learning_rate=5e-4")->allow_extra_args(false);
  app.add_option("--seed", seed, "seed for data generation and training");
  app.add_flag("--deterministic", deterministic, "byte-stable outputs (no wall-clock fields)");

  std::string store, run_dir, checkpoint, out_dir, masks;
  auto* gen = app.add_subcommand("gen-data", "generate a sequence store");
  gen->add_option("--out", store, "store path (paths.store)");
  auto* tr = app.add_subcommand("train", "train a model");
  bool resume = false;
  tr->add_option("--store", store, "training store (paths.store)");
  tr->add_option("--run-dir", run_dir, "run directory (paths.run_dir)");
  tr->add_flag("--resume", resume, "continue from the run directory's checkpoint");
  std::size_t stop_after = 0;
  tr->add_option("--stop-after", stop_after, "halt after this many updates (the run stays partial)");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a store");
  auto* pr = app.add_subcommand("predict", "write prediction strips");
  auto* da = app.add_subcommand("dump-attention", "export attention maps");
  for (auto* sc : {ev, pr, da}) {
    sc->add_option("--checkpoint", checkpoint, "model checkpoint (paths.checkpoint)");
    sc->add_option("--store", store, "sequence store (paths.store)");
    sc->add_option("--out-dir", out_dir, "output directory (paths.out_dir)");
  }
  da->add_option("--masks", masks, "occupancy-mask store (paths.masks)");
  auto* cp = app.add_subcommand("count-params", "print the parameter breakdown");
  bool sweep = false;
  cp->add_flag("--sweep", sweep, "tabulate m x attention channels against the reference count");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  std::string kind = "runtime";
  try {
    std::vector<std::string> all = overrides;
    auto set_path = [&](const std::string& key, const std::string& v) {
      if (!v.empty()) all.push_back("paths." + key + "=" + nlohmann::json(v).dump());
    };
    set_path("store", store);
    set_path("run_dir", run_dir);
    set_path("checkpoint", checkpoint);
    set_path("out_dir", out_dir);
    set_path("masks", masks);
    if (seed) {
      all.push_back("train.seed=" + std::to_string(*seed));
      all.push_back("data.seed=" + std::to_string(*seed));
    }
    if (deterministic) all.push_back("deterministic=true");
    kind = "config";
    RunConfig cfg = resolve_run_config(config_path, all);
    kind = "runtime";

    if (gen->parsed()) {
      cmd_gen_data(cfg, out);
    } else if (tr->parsed()) {
      cmd_train(cfg, resume, out, stop_after);
    } else if (ev->parsed()) {
      cmd_eval(cfg, out);
    } else if (pr->parsed()) {
      cmd_predict(cfg, out);
    } else if (da->parsed()) {
      cmd_dump_attention(cfg, out);
    } else if (cp->parsed()) {
      cmd_count_params(cfg, sweep, out);
    }
    return 0;
  } catch (const UsageError& e) {
    err << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
  } catch (const ConfigError& e) {
    err << nlohmann::json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
  } catch (const FormatError& e) {
    err << nlohmann::json{{"error", "format"}, {"message", e.what()}}.dump() << "\n";
  } catch (const TrainingError& e) {
    err << nlohmann::json{{"error", "training"}, {"message", e.what()}}.dump() << "\n";
  } catch (const std::exception& e) {
    err << nlohmann::json{{"error", kind}, {"message", e.what()}}.dump() << "\n";
  }
  return 1;
}

}  // namespace modelab
