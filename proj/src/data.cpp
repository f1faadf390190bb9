// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "modelab/serialize.hpp"

namespace modelab {
namespace {

// Portable draws from the fully specified mt19937_64 engine.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::uint32_t read_be32(std::istream& is) {
  unsigned char b[4];
  io::read_bytes(is, reinterpret_cast<char*>(b), 4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
               static_cast<char>(v)};
  os.write(b, 4);
}

std::string hex_id(const char* prefix, std::uint64_t v) {
  std::ostringstream os;
  os << prefix << '-' << std::hex << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// IDX

std::vector<DigitSprite> load_idx(const std::filesystem::path& images_path,
                                  const std::filesystem::path& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open IDX images " + images_path.string());
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open IDX labels " + labels_path.string());

  if (std::uint32_t m = read_be32(img); m != 0x00000803)
    throw FormatError("IDX images: bad magic " + std::to_string(m));
  std::uint32_t n = read_be32(img), rows = read_be32(img), cols = read_be32(img);
  if (rows != kDigitSize || cols != kDigitSize)
    throw FormatError("IDX images: expected 28x28, got " + std::to_string(rows) + "x" + std::to_string(cols));
  if (std::uint32_t m = read_be32(lab); m != 0x00000801)
    throw FormatError("IDX labels: bad magic " + std::to_string(m));
  std::uint32_t nl = read_be32(lab);
  if (nl != n)
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");

  std::vector<DigitSprite> out(n);
  std::vector<unsigned char> buf(kDigitSize * kDigitSize);
  for (auto& s : out) {
    io::read_bytes(img, reinterpret_cast<char*>(buf.data()), buf.size());
    char label;
    io::read_bytes(lab, &label, 1);
    s.height = s.width = kDigitSize;
    s.label = static_cast<unsigned char>(label);
    s.pixels.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) s.pixels[i] = buf[i] / 255.0;
  }
  return out;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const std::vector<DigitSprite>& sprites) {
  std::ostringstream img, lab;
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(sprites.size()));
  write_be32(img, kDigitSize);
  write_be32(img, kDigitSize);
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(sprites.size()));
  for (const auto& s : sprites) {
    if (s.height != kDigitSize || s.width != kDigitSize) throw std::invalid_argument("digit sprites must be 28x28");
    for (double v : s.pixels) img.put(static_cast<char>(quantize_pixel(v)));
    lab.put(static_cast<char>(s.label));
  }
  io::atomic_write(images_path, img.str());
  io::atomic_write(labels_path, lab.str());
}

// ---------------------------------------------------------------------------
// Procedural sprites

Sprite make_shape_sprite(ShapeKind kind, std::size_t size) {
  if (size == 0) throw std::invalid_argument("sprite size must be positive");
  Sprite s{size, size, std::vector<double>(size * size, 0.0), static_cast<int>(kind)};
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  const double r = static_cast<double>(size) / 2.0;
  const std::size_t bar = std::max<std::size_t>(1, size / 3);
  const std::size_t lo = (size - bar) / 2;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      bool on = false;
      switch (kind) {
        case ShapeKind::kSquare:
          on = true;
          break;
        case ShapeKind::kCircle: {
          double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
          on = dx * dx + dy * dy <= r * r;
          break;
        }
        case ShapeKind::kCross:
          on = (y >= lo && y < lo + bar) || (x >= lo && x < lo + bar);
          break;
      }
      s.pixels[y * size + x] = on ? 1.0 : 0.0;
    }
  return s;
}

// ---------------------------------------------------------------------------
// Store

std::uint8_t quantize_pixel(double v) {
  double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

SequenceStore SequenceStore::with_dims(std::size_t seq_len, std::size_t input_len, std::size_t channels,
                                       std::size_t height, std::size_t width) {
  if (seq_len == 0 || channels == 0 || height == 0 || width == 0)
    throw std::invalid_argument("sequence store dimensions must be positive");
  if (input_len > seq_len) throw std::invalid_argument("input_len exceeds seq_len");
  SequenceStore s;
  s.seq_len = seq_len;
  s.input_len = input_len;
  s.channels = channels;
  s.height = height;
  s.width = width;
  return s;
}

void SequenceStore::append(std::span<const double> values, std::string id) {
  if (values.size() != sequence_size())
    throw ShapeError("sequence of " + std::to_string(values.size()) + " values does not match store size " +
                     std::to_string(sequence_size()));
  frames.reserve(frames.size() + values.size());
  for (double v : values) frames.push_back(quantize_pixel(v));
  ids.push_back(std::move(id));
}

void SequenceStore::append_bytes(std::span<const std::uint8_t> bytes, std::string id) {
  if (bytes.size() != sequence_size())
    throw ShapeError("sequence of " + std::to_string(bytes.size()) + " bytes does not match store size " +
                     std::to_string(sequence_size()));
  frames.insert(frames.end(), bytes.begin(), bytes.end());
  ids.push_back(std::move(id));
}

std::span<const std::uint8_t> SequenceStore::sequence_bytes(std::size_t i) const {
  if (i >= count()) throw std::out_of_range("sequence index out of range");
  return std::span<const std::uint8_t>(frames).subspan(i * sequence_size(), sequence_size());
}

std::vector<double> SequenceStore::sequence(std::size_t i) const {
  auto b = sequence_bytes(i);
  std::vector<double> out(b.size());
  for (std::size_t j = 0; j < b.size(); ++j) out[j] = b[j] / 255.0;
  return out;
}

std::string encode_sequence_store(const SequenceStore& store) {
  std::ostringstream os;
  io::write_magic(os, "MDSQ");
  io::write_u32(os, kSequenceStoreVersion);
  for (std::size_t v : {store.count(), store.seq_len, store.input_len, store.channels, store.height, store.width})
    io::write_u32(os, static_cast<std::uint32_t>(v));
  os.write(reinterpret_cast<const char*>(store.frames.data()), static_cast<std::streamsize>(store.frames.size()));
  return os.str();
}

void write_sequence_store(const std::filesystem::path& path, const SequenceStore& store) {
  if (store.frames.size() != store.count() * store.sequence_size())
    throw std::logic_error("sequence store payload does not match its header");
  io::atomic_write(path, encode_sequence_store(store));
}

SequenceStore read_sequence_store(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open sequence store " + path.string());
  io::expect_magic(is, "MDSQ");
  if (std::uint32_t v = io::read_u32(is); v != kSequenceStoreVersion)
    throw FormatError("unsupported sequence store version " + std::to_string(v));
  std::uint32_t count = io::read_u32(is);
  std::uint32_t seq_len = io::read_u32(is), input_len = io::read_u32(is);
  std::uint32_t channels = io::read_u32(is), height = io::read_u32(is), width = io::read_u32(is);
  SequenceStore s;
  try {
    s = SequenceStore::with_dims(seq_len, input_len, channels, height, width);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("sequence store header: ") + e.what());
  }
  const std::size_t payload = std::size_t{count} * s.sequence_size();
  s.frames.resize(payload);
  io::read_bytes(is, reinterpret_cast<char*>(s.frames.data()), payload);
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("sequence store has trailing bytes beyond the declared payload");
  std::string stem = path.filename().string();
  for (std::uint32_t i = 0; i < count; ++i) s.ids.push_back(stem + "#" + std::to_string(i));
  return s;
}

// ---------------------------------------------------------------------------
// Motion

void bounce_step(double& pos, double& vel, double limit) {
  pos += vel;
  // Repeated reflection covers steps longer than the free range.
  for (int guard = 0; guard < 64 && (pos < 0.0 || pos > limit); ++guard) {
    if (pos < 0.0) {
      pos = -pos;
      vel = -vel;
    } else if (pos > limit) {
      pos = 2.0 * limit - pos;
      vel = -vel;
    }
  }
  if (limit <= 0.0) pos = 0.0;
}

std::vector<double> render_motion(const std::vector<Sprite>& sprites, std::vector<ObjectMotion> objects,
                                  const MotionParams& params, std::vector<double>* mask) {
  const std::size_t n = params.size;
  for (const auto& o : objects) {
    if (o.sprite >= sprites.size()) throw std::out_of_range("object references a missing sprite");
    const auto& sp = sprites[o.sprite];
    if (sp.height > n || sp.width > n)
      throw std::invalid_argument("sprite " + std::to_string(sp.height) + "x" + std::to_string(sp.width) +
                                  " larger than " + std::to_string(n) + "x" + std::to_string(n) + " canvas");
  }
  std::vector<double> frames(params.seq_len * n * n, 0.0);
  if (mask) mask->assign(frames.size(), 0.0);
  for (std::size_t t = 0; t < params.seq_len; ++t) {
    double* frame = frames.data() + t * n * n;
    for (auto& o : objects) {
      const auto& sp = sprites[o.sprite];
      if (t > 0) {
        bounce_step(o.x, o.vx, static_cast<double>(n - sp.width));
        bounce_step(o.y, o.vy, static_cast<double>(n - sp.height));
      }
      auto left = static_cast<std::size_t>(std::floor(o.x + 0.5));
      auto top = static_cast<std::size_t>(std::floor(o.y + 0.5));
      for (std::size_t y = 0; y < sp.height; ++y)
        for (std::size_t x = 0; x < sp.width; ++x) {
          double v = sp.at(y, x);
          std::size_t idx = (top + y) * n + left + x;
          frame[idx] = std::min(1.0, std::max(frame[idx], v));
          if (mask && v > 0.0) (*mask)[t * n * n + idx] = 1.0;
        }
    }
  }
  return frames;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

std::vector<ObjectMotion> random_objects(std::mt19937_64& rng, const std::vector<Sprite>& sprites,
                                         const MotionParams& p) {
  std::vector<ObjectMotion> objs;
  for (std::size_t k = 0; k < p.num_digits; ++k) {
    ObjectMotion o;
    o.sprite = uniform_index(rng, sprites.size());
    const auto& sp = sprites[o.sprite];
    o.x = uniform(rng, 0.0, static_cast<double>(p.size - sp.width));
    o.y = uniform(rng, 0.0, static_cast<double>(p.size - sp.height));
    double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    double speed = uniform(rng, p.speed_min, p.speed_max);
    o.vx = speed * std::cos(theta);
    o.vy = speed * std::sin(theta);
    objs.push_back(o);
  }
  return objs;
}

SequenceStore generate(const std::vector<Sprite>& sprites, std::size_t count, std::uint64_t seed,
                       const MotionParams& p, SequenceStore* masks, const char* prefix) {
  if (p.seq_len == 0 || p.size == 0) throw std::invalid_argument("sequence length and canvas size must be positive");
  if (p.speed_min < 0 || p.speed_max < p.speed_min) throw std::invalid_argument("invalid speed range");
  for (const auto& s : sprites)
    if (s.height > p.size || s.width > p.size)
      throw std::invalid_argument("sprite larger than canvas");
  SequenceStore store = SequenceStore::with_dims(p.seq_len, p.input_len, 1, p.size, p.size);
  if (masks) *masks = SequenceStore::with_dims(p.seq_len, p.input_len, 1, p.size, p.size);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t s = derive_seed(seed, i);
    std::mt19937_64 rng(s);
    auto objs = sprites.empty() ? std::vector<ObjectMotion>{} : random_objects(rng, sprites, p);
    std::vector<double> mask;
    auto frames = render_motion(sprites, std::move(objs), p, masks ? &mask : nullptr);
    std::string id = hex_id(prefix, s);
    if (masks) masks->append(mask, id);
    store.append(frames, std::move(id));
  }
  return store;
}

}  // namespace

SequenceStore generate_moving_mnist(const std::vector<DigitSprite>& sprites, std::size_t count,
                                    std::uint64_t seed, const MotionParams& params, SequenceStore* masks) {
  if (sprites.empty() && params.num_digits > 0) throw std::invalid_argument("no digit sprites supplied");
  return generate(sprites, count, seed, params, masks, "mmnist");
}

SequenceStore generate_moving_shapes(std::size_t count, std::uint64_t seed, const ShapesParams& params,
                                     SequenceStore* masks) {
  std::vector<Sprite> sprites;
  for (auto kind : {ShapeKind::kSquare, ShapeKind::kCircle, ShapeKind::kCross})
    sprites.push_back(make_shape_sprite(kind, params.sprite_size));
  return generate(sprites, count, seed, params, masks, "shapes");
}

// ---------------------------------------------------------------------------
// Batching

Tensor SequenceBatch::frame(std::size_t t) const {
  const auto& s = frames.shape();
  if (t >= s[1]) throw std::out_of_range("frame index " + std::to_string(t) + " beyond sequence length");
  const std::size_t B = s[0], per = s[2] * s[3] * s[4];
  auto d = frames.data();
  std::vector<double> out(B * per);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(d.begin() + (b * s[1] + t) * per, per, out.begin() + b * per);
  return Tensor::from_data({B, s[2], s[3], s[4]}, std::move(out));
}

SequenceBatch make_batch(const SequenceStore& store, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  SequenceBatch b;
  b.input_len = store.input_len;
  b.pred_len = store.pred_len();
  std::vector<double> data;
  data.reserve(indices.size() * store.sequence_size());
  for (auto i : indices) {
    for (std::uint8_t v : store.sequence_bytes(i)) data.push_back(v / 255.0);
    b.ids.push_back(store.ids[i]);
  }
  b.frames = Tensor::from_data({indices.size(), store.seq_len, store.channels, store.height, store.width},
                               std::move(data));
  return b;
}

BatchIterator::BatchIterator(const SequenceStore& store, std::size_t batch_size, std::uint64_t seed)
    : store_(&store), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (store_->count() + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> BatchIterator::permutation(std::size_t epoch) const {
  std::vector<std::size_t> perm(store_->count());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::mt19937_64 rng(derive_seed(seed_, epoch));
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  return perm;
}

std::vector<std::size_t> BatchIterator::indices_at(std::size_t step) const {
  const std::size_t bpe = batches_per_epoch();
  if (bpe == 0) return {};
  auto perm = permutation(step / bpe);
  std::size_t start = (step % bpe) * batch_size_;
  std::size_t end = std::min(start + batch_size_, perm.size());
  return {perm.begin() + static_cast<long>(start), perm.begin() + static_cast<long>(end)};
}

SequenceBatch BatchIterator::batch_at(std::size_t step) const {
  auto idx = indices_at(step);
  return make_batch(*store_, idx);
}

std::optional<SequenceBatch> BatchIterator::next() {
  if (cursor_ >= batches_per_epoch()) {
    cursor_ = 0;
    ++epoch_;
    return std::nullopt;
  }
  return batch_at(epoch_ * batches_per_epoch() + cursor_++);
}

}  // namespace modelab
