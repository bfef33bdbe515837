// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include "deeptrf/errors.hpp"

namespace deeptrf {

namespace le {

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw InputError("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace le

namespace {
constexpr char kMagic[4] = {'R', 'A', 'T', 'N'};
constexpr std::uint64_t kMaxNameLength = 1 << 16;
constexpr std::uint64_t kMaxRank = 16;
}  // namespace

void write_archive(std::ostream& out, const TensorArchive& archive) {
  out.write(kMagic, 4);
  le::put_u64(out, kCheckpointVersion);
  for (const auto& [name, arr] : archive) {
    if (shape_numel(arr.shape) != arr.data.size()) throw DimensionError("archive entry " + name + " has inconsistent shape");
    le::put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    le::put_u64(out, arr.shape.size());
    for (auto d : arr.shape) le::put_u64(out, d);
    for (double v : arr.data) le::put_f64(out, v);
  }
  if (!out) throw InputError("failed writing tensor archive");
}

TensorArchive read_archive(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kMagic)) throw InputError("not a RATN archive");
  const std::uint64_t version = le::get_u64(in);
  if (version != kCheckpointVersion) throw InputError("unsupported archive version " + std::to_string(version));
  TensorArchive archive;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::uint64_t name_len = le::get_u64(in);
    if (name_len == 0 || name_len > kMaxNameLength) throw InputError("corrupt archive: bad name length");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rank = le::get_u64(in);
    if (rank > kMaxRank) throw InputError("corrupt archive: rank too large for " + name);
    NamedArray arr;
    for (std::uint64_t i = 0; i < rank; ++i) arr.shape.push_back(le::get_u64(in));
    arr.data.resize(shape_numel(arr.shape));
    for (auto& v : arr.data) v = le::get_f64(in);
    if (!archive.emplace(name, std::move(arr)).second) throw InputError("duplicate archive entry " + name);
  }
  return archive;
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_archive(out, archive);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_archive(in);
}

NamedArray to_named(const Tensor& t) { return {t.shape(), std::vector<double>(t.data().begin(), t.data().end())}; }

}  // namespace deeptrf
