// Copyright 2026 The ffnlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Flat binary container: an 8-byte magic, the header length (u64 LE), the
// header CRC-32 (u32 LE), a JSON header, then the raw little-endian tensor
// buffers back to back. The header lists every tensor's name, shape, dtype,
// offset and size within the data section, plus the data section's CRC-32.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ffnlab/model.hpp"
#include "ffnlab/tensor.hpp"

namespace ffnlab::io {

enum class DType { f32, f64 };

std::string to_string(DType t);
DType dtype_from_string(const std::string& name);

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

std::uint32_t crc32(std::span<const std::byte> bytes);
std::uint32_t crc32(std::string_view text);

struct TensorEntry {
  std::string name;
  ad::Shape shape;
  DType dtype = DType::f32;
  std::vector<std::byte> bytes;  // little-endian
};

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorEntry> tensors;

  template <typename T>
  void add(const std::string& name, const ad::Shape& shape, std::span<const T> values);
  template <typename T>
  void add(const std::string& name, const ad::Tensor<T>& t) { add<T>(name, t.shape(), t.values()); }

  bool contains(const std::string& name) const;
  const TensorEntry& entry(const std::string& name) const;
  // Throws DimensionError when the stored dtype or element count disagree.
  template <typename T>
  std::vector<T> values(const std::string& name) const;
  template <typename T>
  ad::Tensor<T> tensor(const std::string& name, bool requires_grad) const;
};

// Writes to a temporary sibling then renames into place.
void write_container(const std::filesystem::path& path, const Container& c);
// Corrupt or truncated files raise ChecksumError.
Container read_container(const std::filesystem::path& path);

// Model weights under "param/<name>" with the config in meta["model_config"].
template <typename T>
void add_model(Container& c, const model::Transformer<T>& m);
template <typename T>
model::Transformer<T> load_model(const Container& c);

}  // namespace ffnlab::io
