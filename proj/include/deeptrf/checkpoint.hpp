// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor container format ("RATN"):
//   magic "RATN" | version u64
//   repeated until EOF:
//     name length u64 | UTF-8 name | rank u64 | dims u64[rank] | data f64[numel]
// All integers and floats little-endian, data row-major.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "deeptrf/tensor.hpp"

namespace deeptrf {

inline constexpr std::uint64_t kCheckpointVersion = 1;

struct NamedArray {
  Shape shape;
  std::vector<double> data;
  bool operator==(const NamedArray&) const = default;
};

using TensorArchive = std::map<std::string, NamedArray>;

void write_archive(std::ostream& out, const TensorArchive& archive);
TensorArchive read_archive(std::istream& in);

void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

NamedArray to_named(const Tensor& t);

namespace le {

void put_u64(std::ostream& out, std::uint64_t v);
void put_f64(std::ostream& out, double v);
std::uint64_t get_u64(std::istream& in);
double get_f64(std::istream& in);

}  // namespace le

}  // namespace deeptrf
