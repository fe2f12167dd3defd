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
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffnlab/tokenizer.hpp"

namespace ffnlab::data {

struct Corpus {
  std::vector<std::string> documents;
};

// A directory (each *.txt file is one document and each *.jsonl line with a
// "text" field is one document, files in path order), a single .txt file or
// a single .jsonl file.
Corpus load_corpus(const std::filesystem::path& path);

std::vector<std::vector<TokenId>> tokenize(const Corpus& corpus, const Tokenizer& tok);

struct BatchConfig {
  std::size_t batch_size = 1;
  std::size_t seq_len = 1;
  std::uint64_t seed = 0;
};

// batch_size rows of seq_len + 1 tokens; row r predicts tokens[r][1..] from
// tokens[r][..seq_len].
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;  // [batch_size, seq_len + 1]

  std::vector<TokenId> inputs() const;   // [batch_size * seq_len]
  std::vector<TokenId> targets() const;  // [batch_size * seq_len]
};

struct StreamState {
  std::uint64_t epoch = 0;
  std::uint64_t batch_in_epoch = 0;
  bool operator==(const StreamState&) const = default;
};

void to_json(nlohmann::json& j, const StreamState& s);
void from_json(const nlohmann::json& j, StreamState& s);

// Endless, deterministic batch source. Each epoch shuffles document order
// with (seed, epoch), joins documents with EOS separators and cuts the token
// stream into windows of seq_len + 1 tokens at stride seq_len. Windows that
// do not fill a whole batch at the end of an epoch are dropped.
class BatchStream {
 public:
  BatchStream(std::vector<std::vector<TokenId>> documents, BatchConfig cfg,
              TokenId separator = kEos);

  Batch next();

  StreamState state() const { return state_; }
  void restore(const StreamState& state);

  std::size_t windows_per_epoch() const { return windows_per_epoch_; }
  std::size_t batches_per_epoch() const { return windows_per_epoch_ / cfg_.batch_size; }
  std::size_t stream_length() const { return stream_length_; }
  const BatchConfig& config() const { return cfg_; }

  // Concatenated token stream for an epoch (document order depends on it).
  std::vector<TokenId> epoch_stream(std::uint64_t epoch) const;
  std::vector<std::size_t> document_order(std::uint64_t epoch) const;

 private:
  void load_epoch(std::uint64_t epoch);

  std::vector<std::vector<TokenId>> documents_;
  BatchConfig cfg_;
  TokenId separator_;
  std::size_t stream_length_ = 0;
  std::size_t windows_per_epoch_ = 0;
  StreamState state_;
  std::uint64_t loaded_epoch_ = ~std::uint64_t{0};
  std::vector<TokenId> current_;
};

}  // namespace ffnlab::data
