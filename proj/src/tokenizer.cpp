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

#include "ffnlab/tokenizer.hpp"

#include <fstream>
#include <sstream>

#include "ffnlab/errors.hpp"

namespace ffnlab::data {

std::vector<std::string_view> split_chunks(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 1; i < text.size(); ++i) {
    if (text[i] == ' ' && text[i - 1] != ' ') {
      out.push_back(text.substr(start, i - start));
      start = i;
    }
  }
  if (start < text.size()) out.push_back(text.substr(start));
  return out;
}

Tokenizer Tokenizer::byte_level() {
  Tokenizer t;
  t.kind_ = TokenizerKind::byte_level;
  t.pieces_.resize(kByteVocabSize);
  for (int b = 0; b < 256; ++b) t.pieces_[static_cast<std::size_t>(b)] = std::string(1, static_cast<char>(b));
  return t;
}

void Tokenizer::add_merge(TokenId left, TokenId right) {
  rank_[{left, right}] = merges_.size();
  merges_.emplace_back(left, right);
  pieces_.push_back(pieces_[static_cast<std::size_t>(left)] +
                    pieces_[static_cast<std::size_t>(right)]);
}

Tokenizer Tokenizer::train_bpe(std::span<const std::string> texts, std::size_t vocab_size) {
  if (vocab_size < kByteVocabSize) {
    throw ConfigError("bpe: vocab_size must be at least " + std::to_string(kByteVocabSize));
  }
  Tokenizer t = byte_level();
  t.kind_ = TokenizerKind::bpe;
  // Distinct chunks with their multiplicities.
  std::map<std::string, std::size_t> chunk_counts;
  for (const auto& text : texts) {
    for (auto c : split_chunks(text)) ++chunk_counts[std::string(c)];
  }
  std::vector<std::pair<std::vector<TokenId>, std::size_t>> words;
  words.reserve(chunk_counts.size());
  for (const auto& [chunk, count] : chunk_counts) {
    std::vector<TokenId> ids;
    for (unsigned char ch : chunk) ids.push_back(static_cast<TokenId>(ch));
    words.emplace_back(std::move(ids), count);
  }
  while (t.vocab_size() < vocab_size) {
    std::map<std::pair<TokenId, TokenId>, std::size_t> pair_counts;
    for (const auto& [ids, count] : words) {
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) pair_counts[{ids[i], ids[i + 1]}] += count;
    }
    // Highest count wins; std::map order breaks ties toward the smallest pair.
    std::pair<TokenId, TokenId> best{};
    std::size_t best_count = 1;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    }
    if (best_count < 2) break;
    const auto new_id = static_cast<TokenId>(t.vocab_size());
    t.add_merge(best.first, best.second);
    for (auto& [ids, count] : words) {
      std::vector<TokenId> merged;
      merged.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == best.first && ids[i + 1] == best.second) {
          merged.push_back(new_id);
          ++i;
        } else {
          merged.push_back(ids[i]);
        }
      }
      ids = std::move(merged);
    }
  }
  return t;
}

void Tokenizer::encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const {
  std::vector<TokenId> ids;
  ids.reserve(chunk.size());
  for (unsigned char ch : chunk) ids.push_back(static_cast<TokenId>(ch));
  while (ids.size() > 1) {
    std::size_t best_rank = merges_.size();
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = rank_.find({ids[i], ids[i + 1]});
      if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == merges_.size()) break;
    const auto [l, r] = merges_[best_rank];
    const auto new_id = static_cast<TokenId>(kByteVocabSize + best_rank);
    std::vector<TokenId> merged;
    merged.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
        merged.push_back(new_id);
        ++i;
      } else {
        merged.push_back(ids[i]);
      }
    }
    ids = std::move(merged);
  }
  out.insert(out.end(), ids.begin(), ids.end());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  if (merges_.empty()) {
    for (unsigned char ch : text) out.push_back(static_cast<TokenId>(ch));
    return out;
  }
  for (auto chunk : split_chunks(text)) encode_chunk(chunk, out);
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
      throw IndexError("decode: token id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(vocab_size()));
    }
    out += pieces_[static_cast<std::size_t>(id)];
  }
  return out;
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : merges_) merges.push_back({l, r});
  return {{"kind", kind_ == TokenizerKind::byte_level ? "byte_level" : "bpe"},
          {"vocab_size", vocab_size()},
          {"specials", {{"bos", kBos}, {"eos", kEos}, {"pad", kPad}}},
          {"merges", merges}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    Tokenizer t = byte_level();
    if (kind == "byte_level") return t;
    if (kind != "bpe") throw ConfigError("tokenizer: unknown kind '" + kind + "'");
    t.kind_ = TokenizerKind::bpe;
    for (const auto& m : j.at("merges")) {
      const auto l = m.at(0).get<TokenId>();
      const auto r = m.at(1).get<TokenId>();
      const auto limit = static_cast<TokenId>(t.vocab_size());
      if (l < 0 || r < 0 || l >= limit || r >= limit) {
        throw ConfigError("tokenizer: merge refers to an unknown id");
      }
      t.add_merge(l, r);
    }
    if (j.contains("vocab_size") && j["vocab_size"].get<std::size_t>() != t.vocab_size()) {
      throw ConfigError("tokenizer: vocab_size disagrees with the merge table");
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("tokenizer: ") + e.what());
  }
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tokenizer " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("tokenizer " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write tokenizer " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace ffnlab::data
