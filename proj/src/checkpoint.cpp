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

#include "ffnlab/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "ffnlab/errors.hpp"

namespace ffnlab::io {

namespace {

constexpr char kMagic[8] = {'F', 'F', 'N', 'L', 'A', 'B', 'C', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint buffers are written in native order and must be little-endian");

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

}  // namespace

std::string to_string(DType t) { return t == DType::f32 ? "f32" : "f64"; }

DType dtype_from_string(const std::string& name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw ConfigError("unknown dtype '" + name + "'");
}

std::uint32_t crc32(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t crc32(std::string_view text) {
  return crc32(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

template <typename T>
void Container::add(const std::string& name, const ad::Shape& shape, std::span<const T> values) {
  if (contains(name)) throw ContractError("container: duplicate tensor " + name);
  TensorEntry e;
  e.name = name;
  e.shape = shape;
  e.dtype = dtype_of<T>();
  auto raw = std::as_bytes(values);
  e.bytes.assign(raw.begin(), raw.end());
  tensors.push_back(std::move(e));
}

bool Container::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

const TensorEntry& Container::entry(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw IndexError("container: no tensor named " + name);
}

template <typename T>
std::vector<T> Container::values(const std::string& name) const {
  const TensorEntry& e = entry(name);
  if (e.dtype != dtype_of<T>()) {
    throw DimensionError("container: tensor " + name + " is " + to_string(e.dtype) +
                         ", requested " + to_string(dtype_of<T>()));
  }
  if (e.bytes.size() != ad::numel(e.shape) * sizeof(T)) {
    throw DimensionError("container: tensor " + name + " size disagrees with its shape");
  }
  std::vector<T> out(ad::numel(e.shape));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

template <typename T>
ad::Tensor<T> Container::tensor(const std::string& name, bool requires_grad) const {
  return ad::Tensor<T>::from_values(entry(name).shape, values<T>(name), requires_grad);
}

void write_container(const std::filesystem::path& path, const Container& c) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::vector<std::byte> data;
  for (const auto& t : c.tensors) {
    manifest.push_back({{"name", t.name},
                        {"shape", t.shape},
                        {"dtype", to_string(t.dtype)},
                        {"offset", offset},
                        {"nbytes", t.bytes.size()}});
    offset += t.bytes.size();
  }
  data.reserve(offset);
  for (const auto& t : c.tensors) data.insert(data.end(), t.bytes.begin(), t.bytes.end());

  nlohmann::json header = {{"format", "ffnlab-container"},
                           {"version", 1},
                           {"meta", c.meta},
                           {"tensors", manifest},
                           {"data_bytes", data.size()},
                           {"data_crc32", crc32(data)}};
  const std::string header_text = header.dump();
  std::string prefix(kMagic, sizeof(kMagic));
  put_le<std::uint64_t>(prefix, header_text.size());
  put_le<std::uint32_t>(prefix, crc32(header_text));

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string() + ": ";
  constexpr std::size_t prefix_len = sizeof(kMagic) + 8 + 4;
  if (bytes.size() < prefix_len || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ChecksumError(where + "not an ffnlab container");
  }
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
  const auto header_crc = get_le<std::uint32_t>(bytes.data() + 16);
  if (header_len > bytes.size() - prefix_len) throw ChecksumError(where + "truncated header");
  const std::string_view header_text(reinterpret_cast<const char*>(bytes.data() + prefix_len),
                                     header_len);
  if (crc32(header_text) != header_crc) throw ChecksumError(where + "header checksum mismatch");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw ChecksumError(where + "unreadable header: " + e.what());
  }
  const std::size_t data_start = prefix_len + header_len;
  const std::span<const std::byte> data(reinterpret_cast<const std::byte*>(bytes.data()) + data_start,
                                        bytes.size() - data_start);
  if (data.size() != header.at("data_bytes").get<std::size_t>()) {
    throw ChecksumError(where + "data section has " + std::to_string(data.size()) +
                        " bytes, header says " + std::to_string(header["data_bytes"].get<std::size_t>()));
  }
  if (crc32(data) != header.at("data_crc32").get<std::uint32_t>()) {
    throw ChecksumError(where + "data checksum mismatch");
  }
  Container c;
  c.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    TensorEntry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<ad::Shape>();
    e.dtype = dtype_from_string(t.at("dtype").get<std::string>());
    const auto off = t.at("offset").get<std::size_t>();
    const auto n = t.at("nbytes").get<std::size_t>();
    if (off + n > data.size() || n != ad::numel(e.shape) * dtype_size(e.dtype)) {
      throw ChecksumError(where + "tensor " + e.name + " lies outside the data section");
    }
    e.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(off),
                   data.begin() + static_cast<std::ptrdiff_t>(off + n));
    c.tensors.push_back(std::move(e));
  }
  return c;
}

template <typename T>
void add_model(Container& c, const model::Transformer<T>& m) {
  c.meta["model_config"] = m.config();
  c.meta["precision"] = to_string(dtype_of<T>());
  for (const auto& nt : m.params().named()) c.add<T>("param/" + nt.name, nt.tensor);
}

template <typename T>
model::Transformer<T> load_model(const Container& c) {
  ModelConfig config;
  try {
    config = c.meta.at("model_config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint has no model config: ") + e.what());
  }
  config.validate();
  model::ModelParams<T> loaded;
  loaded.embedding = c.tensor<T>("param/embedding", true);
  for (std::size_t i = 0; i < config.layer_specs.size(); ++i) {
    const std::string p = "param/layers." + std::to_string(i + 1) + ".";
    model::LayerWeights<T> l;
    l.attn_norm = c.tensor<T>(p + "attn_norm", true);
    l.wq = c.tensor<T>(p + "wq", true);
    l.wk = c.tensor<T>(p + "wk", true);
    l.wv = c.tensor<T>(p + "wv", true);
    l.wo = c.tensor<T>(p + "wo", true);
    if (config.layer_specs[i].has_ffn()) {
      l.ffn_norm = c.tensor<T>(p + "ffn_norm", true);
      l.w_gate = c.tensor<T>(p + "w_gate", true);
      l.w_up = c.tensor<T>(p + "w_up", true);
      l.w_down = c.tensor<T>(p + "w_down", true);
    }
    loaded.layers.push_back(std::move(l));
  }
  loaded.final_norm = c.tensor<T>("param/final_norm", true);
  loaded.unembedding = c.tensor<T>("param/unembedding", true);
  return model::Transformer<T>(config, std::move(loaded));
}

#define FFNLAB_INSTANTIATE(T)                                                            \
  template void Container::add<T>(const std::string&, const ad::Shape&, std::span<const T>); \
  template std::vector<T> Container::values<T>(const std::string&) const;               \
  template ad::Tensor<T> Container::tensor<T>(const std::string&, bool) const;          \
  template void add_model(Container&, const model::Transformer<T>&);                    \
  template model::Transformer<T> load_model(const Container&);

FFNLAB_INSTANTIATE(float)
FFNLAB_INSTANTIATE(double)

#undef FFNLAB_INSTANTIATE

}  // namespace ffnlab::io
