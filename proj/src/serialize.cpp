// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace modelab::io {
namespace {

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v;
  read_bytes(is, reinterpret_cast<char*>(&v), sizeof(T));
  return to_le(v);
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put(os, v); }
void write_f64(std::ostream& os, double v) { put(os, std::bit_cast<std::uint64_t>(v)); }
void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void read_bytes(std::istream& is, char* dst, std::size_t n) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError("unexpected end of file");
}

std::uint32_t read_u32(std::istream& is) { return get<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return get<std::uint64_t>(is); }
double read_f64(std::istream& is) { return std::bit_cast<double>(get<std::uint64_t>(is)); }

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4];
  read_bytes(is, got, 4);
  if (std::memcmp(got, magic, 4) != 0)
    throw FormatError(std::string("bad magic: expected \"") + magic + "\", got \"" +
                      std::string(got, 4) + "\"");
}

std::string read_string(std::istream& is, std::size_t max_len) {
  std::uint32_t n = read_u32(is);
  if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  read_bytes(is, s.data(), n);
  return s;
}

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    os.flush();
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace modelab::io

namespace modelab {

void write_tensor(std::ostream& os, const Tensor& t) {
  io::write_magic(os, "MDTN");
  io::write_u32(os, kTensorFormatVersion);
  io::write_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) io::write_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) io::write_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  io::expect_magic(is, "MDTN");
  std::uint32_t version = io::read_u32(is);
  if (version != kTensorFormatVersion)
    throw FormatError("unsupported tensor version " + std::to_string(version));
  std::uint32_t ndim = io::read_u32(is);
  if (ndim == 0 || ndim > 8) throw FormatError("implausible tensor rank " + std::to_string(ndim));
  Shape shape(ndim);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = io::read_u32(is);
    if (d == 0) throw FormatError("zero tensor dimension");
    n *= d;
    if (n > (std::size_t{1} << 32)) throw FormatError("tensor too large");
  }
  std::vector<double> data(n);
  for (auto& v : data) v = io::read_f64(is);
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace modelab
