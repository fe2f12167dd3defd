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

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ffnlab/model.hpp"

namespace ffnlab::data {

// Ids 0..255 are raw bytes; the three specials follow; BPE merges after.
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kPad = 258;
inline constexpr std::size_t kByteVocabSize = 259;

enum class TokenizerKind { byte_level, bpe };

class Tokenizer {
 public:
  static Tokenizer byte_level();
  // Learns merges over space-delimited chunks of `texts` until the vocabulary
  // reaches `vocab_size` or no pair occurs twice.
  static Tokenizer train_bpe(std::span<const std::string> texts, std::size_t vocab_size);

  static Tokenizer from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static Tokenizer load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  TokenizerKind kind() const { return kind_; }
  std::size_t vocab_size() const { return kByteVocabSize + merges_.size(); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }

  std::vector<TokenId> encode(std::string_view text) const;
  // Specials decode to nothing; ids outside the vocabulary raise IndexError.
  std::string decode(std::span<const TokenId> ids) const;

 private:
  Tokenizer() = default;
  void add_merge(TokenId left, TokenId right);
  void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

  TokenizerKind kind_ = TokenizerKind::byte_level;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::map<std::pair<TokenId, TokenId>, std::size_t> rank_;
  std::vector<std::string> pieces_;
};

// Splits before every space so each chunk is one word plus its leading space.
std::vector<std::string_view> split_chunks(std::string_view text);

}  // namespace ffnlab::data
