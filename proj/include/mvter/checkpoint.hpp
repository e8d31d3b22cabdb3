// Copyright 2026 The MVTER Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mvter/binary_io.hpp"
#include "mvter/tensor.hpp"

namespace mvter {

// "MVTR" checkpoint layout, all integers little-endian:
//   magic "MVTR" | version u16 | count u32 |
//   count x { name_len u32 | name bytes (UTF-8) | rank u32 | dims u32[rank] | f32[numel] }
inline constexpr char kCheckpointMagic[] = "MVTR";
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
void write_checkpoint(ByteWriter& w, const std::vector<NamedTensor<T>>& tensors) {
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (T v : t.data()) w.f32(static_cast<float>(v));
  }
}

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor<T>>& tensors) {
  ByteWriter w;
  write_checkpoint(w, tensors);
  return w.bytes();
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor<T>>& tensors) {
  ByteWriter w;
  write_checkpoint(w, tensors);
  w.save(path);
}

template <typename T>
std::vector<NamedTensor<T>> decode_checkpoint(ByteReader& r) {
  if (r.raw(4) != std::string_view(kCheckpointMagic, 4)) r.fail_at(0, "bad magic (expected MVTR)");
  const std::size_t version_at = r.offset();
  if (const auto version = r.u16(); version != kCheckpointVersion)
    r.fail_at(version_at, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor<T>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.raw(name_len);
    const std::size_t rank_at = r.offset();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) r.fail_at(rank_at, "implausible tensor rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      numel *= shape.back();
    }
    if (numel * 4 > r.remaining())
      r.fail("truncated data for tensor '" + name + "'");
    std::vector<T> values(static_cast<std::size_t>(numel));
    for (auto& v : values) v = static_cast<T>(r.f32());
    out.push_back({std::move(name), Tensor<T>(std::move(shape), std::move(values))});
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last tensor");
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> load_checkpoint(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  return decode_checkpoint<T>(r);
}

}  // namespace mvter
