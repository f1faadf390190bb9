// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <random>

#include "modelab/data.hpp"
#include "modelab/model.hpp"
#include "modelab/serialize.hpp"
#include "oracles.hpp"

using namespace modelab;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden_channels = 3;
  c.frame_height = 6;
  c.frame_width = 5;
  c.kernel_set = {1, 3};
  c.input_len = 3;
  c.pred_len = 3;
  return c;
}

SequenceBatch random_batch(const ModelConfig& c, std::size_t B, std::mt19937_64& rng) {
  SequenceBatch b;
  b.input_len = c.input_len;
  b.pred_len = c.pred_len;
  b.frames = oracle::random_tensor({B, c.input_len + c.pred_len, c.frame_channels, c.frame_height, c.frame_width},
                                   rng, 0.0, 1.0);
  return b;
}

// Copies every parameter whose name exists in `dst`.
void copy_shared(const Model& src, Model& dst) {
  auto s = src.parameters();
  for (auto& d : dst.parameters())
    for (auto& p : s)
      if (p.name == d.name) std::copy(p.tensor.data().begin(), p.tensor.data().end(), d.tensor.mutable_data().begin());
}

}  // namespace

TEST(ModelConfig, JsonRoundTripAndUnknownKeys) {
  ModelConfig c = small_config();
  c.attn_channels = AttnChannels::kSingle;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
  j["bogus"] = 1;
  EXPECT_THROW(j.get<ModelConfig>(), std::invalid_argument);
  ModelConfig bad = small_config();
  bad.kernel_set = {4};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ParamCount, GateBlockClosedForm) {
  ModelConfig c;  // N=4, C=64
  ParamBreakdown b = count_params(c);
  EXPECT_EQ(b.gates_per_layer, 819456u);
  EXPECT_EQ(b.gates_per_layer, 8u * 64 * 64 * 25 + 4 * 64);
  EXPECT_EQ(b.total, b.encoder + b.decoder + b.layers * b.per_layer());
}

TEST(ParamCount, MatchesSerializedFloatsForRandomConfigs) {
  std::mt19937_64 rng(5);
  const std::vector<std::vector<int>> sets{{3}, {1, 3}, {3, 5, 7}, {5}};
  for (int i = 0; i < 20; ++i) {
    ModelConfig c;
    c.num_layers = 1 + rng() % 3;
    c.hidden_channels = 1 + rng() % 6;
    c.frame_channels = 1 + rng() % 2;
    c.frame_height = c.frame_width = 4;
    c.kernel_set = sets[rng() % sets.size()];
    c.dcb_blocks = 1 + rng() % 3;
    c.attn_channels = rng() % 2 ? AttnChannels::kFull : AttnChannels::kSingle;
    c.use_dcb = rng() % 4 != 0;
    c.use_layer_norm = rng() % 3 != 0;
    Model m = Model::initialize(c, i);
    EXPECT_EQ(count_params(c).total, m.parameter_floats());
    std::size_t serialized = 0;
    for (const auto& p : decode_model(encode_model(m)).parameters()) serialized += p.tensor.numel();
    EXPECT_EQ(count_params(c).total, serialized);
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  Model m = Model::initialize(small_config(), 3);
  Model back = decode_model(encode_model(m));
  EXPECT_EQ(back.config(), m.config());
  auto a = m.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(oracle::vec(a[i].tensor), oracle::vec(b[i].tensor));
  }
  EXPECT_EQ(encode_model(back), encode_model(m));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  std::string bytes = encode_model(Model::initialize(small_config(), 3));
  EXPECT_THROW(decode_model(bytes.substr(0, bytes.size() - 5)), FormatError);
  EXPECT_THROW(decode_model(bytes + "x"), FormatError);
  std::string wrong = bytes;
  wrong[0] = 'X';
  EXPECT_THROW(decode_model(wrong), FormatError);
  auto path = std::filesystem::temp_directory_path() / "modelab_missing_checkpoint.mdck";
  EXPECT_ANY_THROW(load_model(path));
}

TEST(Forward, ShapesAndSplit) {
  std::mt19937_64 rng(1);
  ModelConfig c = small_config();
  Model m = Model::initialize(c, 1);
  SequenceBatch b = random_batch(c, 2, rng);
  ForwardResult r = forward_sequence(m, b, {});
  EXPECT_EQ(r.outputs.size(), c.input_len + c.pred_len - 1);
  EXPECT_EQ(r.predictions().shape(), (Shape{2, c.pred_len, 1, 6, 5}));
  EXPECT_EQ(r.warmup().size(), c.input_len - 1);
  ForwardOptions bad;
  bad.teacher_prob = 0.5;
  EXPECT_THROW(forward_sequence(m, b, bad), std::invalid_argument);
  bad.mode = RunMode::kTrain;
  bad.teacher_prob = 1.5;
  EXPECT_THROW(forward_sequence(m, b, bad), std::invalid_argument);
  b.input_len = 2;
  b.pred_len = 4;
  EXPECT_THROW(forward_sequence(m, b, {}), std::invalid_argument);
}

TEST(Forward, ClosedLoopNeverReadsTargets) {
  std::mt19937_64 rng(2);
  ModelConfig c = small_config();
  Model m = Model::initialize(c, 2);
  SequenceBatch b = random_batch(c, 2, rng);
  Tensor before = forward_sequence(m, b, {}).predictions();
  std::vector<double> f = oracle::vec(b.frames);
  const std::size_t per = f.size() / 2 / (c.input_len + c.pred_len);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t t = c.input_len; t < c.input_len + c.pred_len; ++t)
      for (std::size_t i = 0; i < per; ++i)
        f[(s * (c.input_len + c.pred_len) + t) * per + i] = std::numeric_limits<double>::quiet_NaN();
  b.frames = Tensor::from_data(b.frames.shape(), f);
  EXPECT_EQ(oracle::vec(forward_sequence(m, b, {}).predictions()), oracle::vec(before));
  ForwardOptions tr;
  tr.mode = RunMode::kTrain;
  tr.teacher_prob = 0.0;
  EXPECT_EQ(oracle::vec(forward_sequence(m, b, tr).predictions()), oracle::vec(before));
}

TEST(Forward, TeacherForcingUsesGroundTruthAndIsSeeded) {
  std::mt19937_64 rng(3);
  ModelConfig c = small_config();
  Model m = Model::initialize(c, 3);
  SequenceBatch b = random_batch(c, 4, rng);
  ForwardOptions tf;
  tf.mode = RunMode::kTrain;
  tf.teacher_prob = 1.0;
  std::size_t gt_steps = 0;
  tf.input_tap = [&](std::size_t t, const Tensor& input, const std::vector<bool>& teacher) {
    for (bool v : teacher) EXPECT_TRUE(v);
    EXPECT_EQ(oracle::vec(input), oracle::vec(b.frame(t - 1)));
    ++gt_steps;
  };
  forward_sequence(m, b, tf);
  EXPECT_EQ(gt_steps, c.input_len + c.pred_len - 1);

  ForwardOptions mix;
  mix.mode = RunMode::kTrain;
  mix.teacher_prob = 0.5;
  mix.seed = 77;
  auto a = oracle::vec(forward_sequence(m, b, mix).predictions());
  auto again = oracle::vec(forward_sequence(m, b, mix).predictions());
  EXPECT_EQ(a, again);
}

TEST(Forward, ZeroDcbEqualsConvLstmBitwise) {
  std::mt19937_64 rng(4);
  ModelConfig c = small_config();
  c.input_len = 10;
  c.pred_len = 10;
  Model modernn = Model::initialize(c, 4);
  for (auto& lp : modernn.layers)
    for (auto& block : lp.dcb)
      for (auto* ws : {&block.w_h, &block.w_x})
        for (auto& [k, w] : *ws)
          for (auto& v : w.mutable_data()) v = 0.0;
  ModelConfig base = c;
  base.use_dcb = false;
  Model convlstm = Model::zeros(base);
  copy_shared(modernn, convlstm);
  SequenceBatch b = random_batch(c, 2, rng);
  ForwardResult x = forward_sequence(modernn, b, {}), y = forward_sequence(convlstm, b, {});
  ASSERT_EQ(x.outputs.size(), 19u);
  for (std::size_t i = 0; i < x.outputs.size(); ++i) EXPECT_EQ(oracle::vec(x.outputs[i]), oracle::vec(y.outputs[i]));
}

TEST(Forward, TracesHaveStepLayerBlockLayout) {
  std::mt19937_64 rng(6);
  ModelConfig c = small_config();
  c.dcb_blocks = 2;
  c.attn_channels = AttnChannels::kSingle;
  Model m = Model::initialize(c, 6);
  ForwardOptions o;
  o.keep_traces = true;
  ForwardResult r = forward_sequence(m, random_batch(c, 1, rng), o);
  ASSERT_EQ(r.traces.size(), 5u);
  ASSERT_EQ(r.traces[0].size(), 2u);
  ASSERT_EQ(r.traces[0][0].size(), 2u);
  EXPECT_EQ(r.traces[0][0][0].attn_x.shape(), (Shape{1, 1, 6, 5}));
}
