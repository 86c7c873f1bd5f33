// Copyright 2026 The spdg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// SPDG tensor blob:
//   "SPDG" | u32 version | u8 dtype (0=f64, 1=f32) | u8 rank | u64 dims[rank] | values
// All integers and values little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "spdg/error.hpp"
#include "spdg/numerics/tensor.hpp"

namespace spdg {

inline constexpr std::uint32_t kBlobVersion = 1;

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) fail(ErrorCode::kShapeMismatch, "blob truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_blob(const Tensor& t, DType dtype = DType::kF64) {
  std::vector<std::uint8_t> out{'S', 'P', 'D', 'G'};
  detail::put_le<std::uint32_t>(out, kBlobVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  if (t.rank() > 255) fail(ErrorCode::kDimension, "rank too large for blob");
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
  for (double v : t.data()) {
    if (dtype == DType::kF64) {
      detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    } else {
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

struct DecodedBlob {
  Tensor tensor;
  DType dtype;
};

inline DecodedBlob decode_blob(const std::vector<std::uint8_t>& in) {
  if (in.size() < 4 || in[0] != 'S' || in[1] != 'P' || in[2] != 'D' || in[3] != 'G') fail(ErrorCode::kIo, "missing SPDG magic");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(in, pos);
  if (version != kBlobVersion) fail(ErrorCode::kUnsupportedVersion, "blob format version " + std::to_string(version));
  const auto dtype_byte = detail::get_le<std::uint8_t>(in, pos);
  if (dtype_byte > 1) fail(ErrorCode::kIo, "unknown dtype flag " + std::to_string(dtype_byte));
  const auto dtype = static_cast<DType>(dtype_byte);
  const auto rank = detail::get_le<std::uint8_t>(in, pos);
  Shape shape;
  for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(detail::get_le<std::uint64_t>(in, pos)));
  for (std::size_t d : shape) {
    if (d == 0) fail(ErrorCode::kShapeMismatch, "zero-length axis in blob");
  }
  const std::size_t count = numel(shape);
  const std::size_t width = dtype == DType::kF64 ? 8 : 4;
  if (in.size() - pos != count * width) {
    fail(ErrorCode::kShapeMismatch, "blob payload holds " + std::to_string(in.size() - pos) + " bytes, shape " +
                                        shape_string(shape) + " needs " + std::to_string(count * width));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = dtype == DType::kF64 ? std::bit_cast<double>(detail::get_le<std::uint64_t>(in, pos))
                                   : static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(in, pos)));
  }
  return {Tensor(std::move(shape), std::move(data)), dtype};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorCode::kIo, "write failed for " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline void save_blob(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::kF64) {
  write_bytes(path, encode_blob(t, dtype));
}

inline Tensor load_blob(const std::filesystem::path& path) { return decode_blob(read_bytes(path)).tensor; }

/// FNV-1a over the f64 blob encoding; used for freeze and reproducibility checks.
inline std::uint64_t checksum(const Tensor& t, std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (std::uint8_t byte : encode_blob(t)) {
    h ^= byte;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace spdg
