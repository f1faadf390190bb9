// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/pgm.hpp"

#include <sstream>
#include <stdexcept>

#include "modelab/data.hpp"
#include "modelab/serialize.hpp"

namespace modelab {

void GrayImage::paste(std::span<const double> plane, std::size_t h, std::size_t w, std::size_t top,
                      std::size_t left) {
  if (plane.size() != h * w) throw std::invalid_argument("paste: plane size does not match h*w");
  if (top + h > height || left + w > width) throw std::out_of_range("paste: plane exceeds image bounds");
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) at(top + y, left + x) = quantize_pixel(plane[y * w + x]);
}

std::string encode_pgm(const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height) throw std::invalid_argument("pgm: pixel count mismatch");
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

GrayImage decode_pgm(const std::string& bytes) {
  std::istringstream is(bytes);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  if (!(is >> magic >> w >> h >> maxval) || magic != "P5" || maxval != 255)
    throw FormatError("pgm: expected a P5 header with maxval 255");
  is.get();
  GrayImage img(w, h);
  const auto offset = static_cast<std::size_t>(is.tellg());
  if (bytes.size() != offset + w * h) throw FormatError("pgm: payload size mismatch");
  std::copy(bytes.begin() + static_cast<long>(offset), bytes.end(), img.pixels.begin());
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) { io::atomic_write(path, encode_pgm(img)); }

GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(io::read_file(path)); }

}  // namespace modelab
