// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sequence sources: IDX digit loading, bouncing-sprite generators, the
// on-disk sequence store and seeded mini-batching.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "modelab/tensor.hpp"

namespace modelab {

/// Grayscale sprite with pixels in [0,1], row-major.
struct Sprite {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  int label = -1;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

/// MNIST digit: always 28x28.
using DigitSprite = Sprite;
inline constexpr std::size_t kDigitSize = 28;

/// Reads an IDX3 image file and IDX1 label file. Bytes map to [0,1] by /255.
std::vector<DigitSprite> load_idx(const std::filesystem::path& images_path,
                                  const std::filesystem::path& labels_path);

/// Writes IDX3/IDX1 files (pixels quantized by round(v*255)); used for fixtures.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const std::vector<DigitSprite>& sprites);

enum class ShapeKind { kSquare = 0, kCircle = 1, kCross = 2 };
Sprite make_shape_sprite(ShapeKind kind, std::size_t size);

/// Uniform-shape sequences held as 8-bit frames; values quantize on append.
struct SequenceStore {
  std::size_t seq_len = 0;
  std::size_t input_len = 0;
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> frames;  // sequence-major, then time, channel, row, column
  std::vector<std::string> ids;

  std::size_t count() const { return ids.size(); }
  std::size_t frame_size() const { return channels * height * width; }
  std::size_t sequence_size() const { return seq_len * frame_size(); }
  std::size_t pred_len() const { return seq_len - input_len; }

  static SequenceStore with_dims(std::size_t seq_len, std::size_t input_len, std::size_t channels,
                                 std::size_t height, std::size_t width);
  /// Appends one sequence of seq_len*frame_size values in [0,1].
  void append(std::span<const double> values, std::string id);
  void append_bytes(std::span<const std::uint8_t> bytes, std::string id);
  std::vector<double> sequence(std::size_t i) const;
  std::span<const std::uint8_t> sequence_bytes(std::size_t i) const;
};

/// round-half-up of v*255 after clamping to [0,1].
std::uint8_t quantize_pixel(double v);

inline constexpr std::uint32_t kSequenceStoreVersion = 1;

/// "MDSQ" | version | count | seq_len | input_len | channels | height | width | u8 frames.
void write_sequence_store(const std::filesystem::path& path, const SequenceStore& store);
std::string encode_sequence_store(const SequenceStore& store);
SequenceStore read_sequence_store(const std::filesystem::path& path);

struct MotionParams {
  std::size_t size = 64;
  std::size_t num_digits = 2;
  std::size_t seq_len = 20;
  std::size_t input_len = 10;
  double speed_min = 2.0;
  double speed_max = 4.0;
};

/// Top-left position and constant-speed velocity of one sprite.
struct ObjectMotion {
  double x = 0, y = 0, vx = 0, vy = 0;
  std::size_t sprite = 0;
};

/// Moves one axis by one step with elastic reflection inside [0, limit].
void bounce_step(double& pos, double& vel, double limit);

/// Renders seq_len frames (size x size) of the given objects, max-compositing
/// overlaps. Writes sprite-occupancy masks when `mask` is non-null.
std::vector<double> render_motion(const std::vector<Sprite>& sprites, std::vector<ObjectMotion> objects,
                                  const MotionParams& params, std::vector<double>* mask = nullptr);

/// Per-sequence seed derived from a base seed and an index (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

SequenceStore generate_moving_mnist(const std::vector<DigitSprite>& sprites, std::size_t count,
                                    std::uint64_t seed, const MotionParams& params,
                                    SequenceStore* masks = nullptr);

struct ShapesParams : MotionParams {
  std::size_t sprite_size = 7;
};

SequenceStore generate_moving_shapes(std::size_t count, std::uint64_t seed, const ShapesParams& params,
                                     SequenceStore* masks = nullptr);

/// frames [B, T+K, C, H, W] with T = input_len, K = pred_len.
struct SequenceBatch {
  Tensor frames;
  std::size_t input_len = 0;
  std::size_t pred_len = 0;
  std::vector<std::string> ids;

  std::size_t batch_size() const { return frames.dim(0); }
  std::size_t seq_len() const { return input_len + pred_len; }
  /// Frame t (0-based) of every sequence as [B, C, H, W].
  Tensor frame(std::size_t t) const;
};

SequenceBatch make_batch(const SequenceStore& store, std::span<const std::size_t> indices);

/// Epoch-wise seeded shuffles without replacement; the last batch of an epoch may be short.
class BatchIterator {
 public:
  BatchIterator(const SequenceStore& store, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const;
  /// Store indices of the `step`-th batch of the endless stream.
  std::vector<std::size_t> indices_at(std::size_t step) const;
  SequenceBatch batch_at(std::size_t step) const;
  /// Next batch of the current epoch; nullopt at the end of each epoch.
  std::optional<SequenceBatch> next();
  void reset() { cursor_ = 0; epoch_ = 0; }

 private:
  std::vector<std::size_t> permutation(std::size_t epoch) const;

  const SequenceStore* store_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
};

}  // namespace modelab
