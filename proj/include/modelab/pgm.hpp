// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary grayscale (P5, maxval 255) images.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace modelab {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}
  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

  /// Copies an h x w plane of [0,1] values (clamped, rounded) to (top, left).
  void paste(std::span<const double> plane, std::size_t h, std::size_t w, std::size_t top, std::size_t left);
};

std::string encode_pgm(const GrayImage& img);
GrayImage decode_pgm(const std::string& bytes);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace modelab
