// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <algorithm>
#include <sstream>

#include "modelab/commands.hpp"
#include "modelab/pgm.hpp"
#include "modelab/serialize.hpp"

using namespace modelab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("modelab_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kSmall{"--set", "model.frame_height=16", "--set", "model.frame_width=16",
                                      "--set", "model.num_layers=1",    "--set", "model.hidden_channels=2",
                                      "--set", "model.kernel_set=[3]",  "--set", "model.input_len=3",
                                      "--set", "model.pred_len=3",      "--set", "data.size=16",
                                      "--set", "data.seq_len=6",        "--set", "data.input_len=3",
                                      "--set", "data.count=3",          "--set", "data.sprite_size=5"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmall.begin(), kSmall.end());
  return args;
}

}  // namespace

TEST(RunConfig, DefaultsFileAndOverrides) {
  auto dir = scratch("config");
  std::ofstream(dir / "c.json") << R"({"train": {"learning_rate": 0.01}, "model": {"kernel_set": [3]}})";
  RunConfig c = resolve_run_config(dir / "c.json", {"train.batch_size=2", "paths.store=x.mdsq", "deterministic=true"});
  EXPECT_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.train.batch_size, 2u);
  EXPECT_EQ(c.model.kernel_set, std::vector<int>{3});
  EXPECT_EQ(c.paths.store, "x.mdsq");
  EXPECT_TRUE(c.deterministic);
  nlohmann::json j = c;
  EXPECT_EQ(j.get<RunConfig>(), c);

  EXPECT_THROW(resolve_run_config({}, {"train.nonsense=1"}), ConfigError);
  EXPECT_THROW(resolve_run_config({}, {"no_equals_sign"}), ConfigError);
  EXPECT_THROW(resolve_run_config({}, {"train.batch_size=\"many\""}), ConfigError);
  EXPECT_THROW(resolve_run_config(dir / "missing.json", {}), ConfigError);
  std::ofstream(dir / "bad.json") << R"({"extra": 1})";
  EXPECT_THROW(resolve_run_config(dir / "bad.json", {}), ConfigError);
}

TEST(Pgm, EncodeDecodeAndPaste) {
  GrayImage img(3, 2);
  std::vector<double> plane{0.0, 0.5, 1.0, 2.0};
  img.paste(plane, 2, 2, 0, 1);
  EXPECT_EQ(img.at(0, 1), 0);
  EXPECT_EQ(img.at(0, 2), 128);
  EXPECT_EQ(img.at(1, 2), 255);
  std::string bytes = encode_pgm(img);
  EXPECT_EQ(bytes.substr(0, 2), "P5");
  GrayImage back = decode_pgm(bytes);
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_ANY_THROW(decode_pgm("P2\n1 1\n255\n0"));
  EXPECT_ANY_THROW(decode_pgm(bytes.substr(0, bytes.size() - 1)));
}

TEST(Cli, GenDataIsByteReproducible) {
  auto dir = scratch("gen");
  CliRun a = cli(with_small({"gen-data", "--out", (dir / "a.mdsq").string(), "--seed", "4"}));
  CliRun b = cli(with_small({"gen-data", "--out", (dir / "b.mdsq").string(), "--seed", "4"}));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(io::read_file(dir / "a.mdsq"), io::read_file(dir / "b.mdsq"));
  EXPECT_TRUE(fs::exists(dir / "a.mdsq.config.json"));
  EXPECT_NE(a.out.find("3 sequences"), std::string::npos);
}

TEST(Cli, TrainEvalPredictAttention) {
  auto dir = scratch("flow");
  const std::string store = (dir / "s.mdsq").string(), run = (dir / "run").string();
  ASSERT_EQ(cli(with_small({"gen-data", "--out", store, "--set", "data.write_masks=true"})).code, 0);
  CliRun t = cli(with_small({"train", "--store", store, "--run-dir", run, "--deterministic", "--set",
                          "train.max_iterations=3", "--set", "train.batch_size=2"}));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint.mdck"));
  EXPECT_TRUE(fs::exists(dir / "run" / kResolvedConfigFile));
  EXPECT_FALSE(fs::exists(dir / "run" / kPartialMarker));
  EXPECT_TRUE(fs::exists(dir / "run" / "summary.json"));

  const std::string ckpt = (dir / "run" / "checkpoint.mdck").string();
  CliRun e = cli({"eval", "--checkpoint", ckpt, "--store", store, "--out-dir", (dir / "eval").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  auto metrics = nlohmann::json::parse(io::read_file(dir / "eval" / "metrics.json"));
  MetricReport direct = evaluate(load_model(ckpt), read_sequence_store(store));
  EXPECT_EQ(metrics["aggregate"]["mse"].get<double>(), direct.mse_mean);

  CliRun p = cli({"predict", "--checkpoint", ckpt, "--store", store, "--out-dir", (dir / "pred").string()});
  ASSERT_EQ(p.code, 0) << p.err;
  GrayImage strip = read_pgm(dir / "pred" / "seq_0000.pgm");
  EXPECT_EQ(strip.width, 3u * 16);
  EXPECT_EQ(strip.height, 3u * 16);

  CliRun d = cli({"dump-attention", "--checkpoint", ckpt, "--store", store, "--masks", store + ".masks.mdsq",
               "--out-dir", (dir / "attn").string()});
  ASSERT_EQ(d.code, 0) << d.err;
  auto attn = nlohmann::json::parse(io::read_file(dir / "attn" / "attention.json"));
  EXPECT_FALSE(attn.empty());
  EXPECT_TRUE(fs::exists(dir / "attn" / "seq_0000_attn_x_b0.pgm"));
}

TEST(Cli, CountParamsSweep) {
  CliRun r = cli({"count-params", "--sweep"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("5998273"), std::string::npos);
  EXPECT_NE(r.out.find("<- closest"), std::string::npos);
  auto rows = param_sweep(ModelConfig{});
  EXPECT_EQ(rows.size(), 8u);
}

TEST(Cli, ErrorsAreSingleJsonLines) {
  CliRun usage = cli({"frobnicate"});
  EXPECT_EQ(usage.code, 2);
  CliRun cfg = cli({"count-params", "--set", "model.bogus=1"});
  EXPECT_EQ(cfg.code, 1);
  auto j = nlohmann::json::parse(cfg.err);
  EXPECT_EQ(j["error"], "config");
  EXPECT_EQ(std::count(cfg.err.begin(), cfg.err.end(), '\n'), 1);
  CliRun missing = cli({"eval", "--checkpoint", "/nonexistent.mdck", "--store", "/nonexistent.mdsq"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NO_THROW(nlohmann::json::parse(missing.err));
}

TEST(Cli, FailedTrainLeavesPartialMarker) {
  auto dir = scratch("partial");
  const std::string store = (dir / "s.mdsq").string(), run = (dir / "run").string();
  ASSERT_EQ(cli(with_small({"gen-data", "--out", store})).code, 0);
  CliRun t = cli(with_small({"train", "--store", store, "--run-dir", run, "--set", "train.max_iterations=2",
                          "--set", "train.learning_rate=1e300"}));
  EXPECT_EQ(t.code, 1);
  EXPECT_EQ(nlohmann::json::parse(t.err)["error"], "training");
  EXPECT_TRUE(fs::exists(dir / "run" / kPartialMarker));
}

TEST(Cli, StopAndResumeMatchesStraightRun) {
  auto dir = scratch("resume");
  const std::string store = (dir / "s.mdsq").string();
  ASSERT_EQ(cli(with_small({"gen-data", "--out", store})).code, 0);
  auto train_args = [&](const std::string& run) {
    return with_small({"train", "--store", store, "--run-dir", (dir / run).string(), "--deterministic", "--set",
                       "train.max_iterations=4", "--set", "train.batch_size=2"});
  };
  ASSERT_EQ(cli(train_args("straight")).code, 0);
  auto first = train_args("split");
  first.insert(first.end(), {"--stop-after", "2"});
  ASSERT_EQ(cli(first).code, 0);
  EXPECT_TRUE(fs::exists(dir / "split" / kPartialMarker));
  auto second = train_args("split");
  second.push_back("--resume");
  ASSERT_EQ(cli(second).code, 0);
  EXPECT_FALSE(fs::exists(dir / "split" / kPartialMarker));
  EXPECT_EQ(io::read_file(dir / "straight" / "train_log.jsonl"), io::read_file(dir / "split" / "train_log.jsonl"));
  EXPECT_EQ(io::read_file(dir / "straight" / "checkpoint.mdck"), io::read_file(dir / "split" / "checkpoint.mdck"));
}
