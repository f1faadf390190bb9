// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary helpers and the tensor container record:
//   "MDTN" | version u32 | ndim u32 | dims u32 x ndim | f64 x numel

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "modelab/tensor.hpp"

namespace modelab {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

/// Malformed, truncated or incompatible file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_magic(std::ostream& os, const char (&magic)[5]);
void write_string(std::ostream& os, const std::string& s);  // u32 length + bytes

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
void expect_magic(std::istream& is, const char (&magic)[5]);
std::string read_string(std::istream& is, std::size_t max_len = 1u << 26);
void read_bytes(std::istream& is, char* dst, std::size_t n);

/// Writes `contents` to `path` via a sibling ".partial" file renamed on success.
void atomic_write(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace io

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace modelab
