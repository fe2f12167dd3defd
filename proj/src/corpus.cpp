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

#include "ffnlab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ffnlab/errors.hpp"

namespace ffnlab::data {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void append_jsonl(const std::filesystem::path& path, Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      corpus.documents.push_back(j.at("text").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  Corpus corpus;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension();
      if (ext == ".txt" || ext == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (f.extension() == ".jsonl") {
        append_jsonl(f, corpus);
      } else {
        corpus.documents.push_back(read_file(f));
      }
    }
  } else if (fs::is_regular_file(path)) {
    if (path.extension() == ".jsonl") {
      append_jsonl(path, corpus);
    } else {
      corpus.documents.push_back(read_file(path));
    }
  } else {
    throw IoError("corpus path " + path.string() + " does not exist");
  }
  std::erase_if(corpus.documents, [](const std::string& d) { return d.empty(); });
  if (corpus.documents.empty()) throw ConfigError("corpus " + path.string() + " is empty");
  return corpus;
}

std::vector<std::vector<TokenId>> tokenize(const Corpus& corpus, const Tokenizer& tok) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(corpus.documents.size());
  for (const auto& d : corpus.documents) out.push_back(tok.encode(d));
  return out;
}

std::vector<TokenId> Batch::inputs() const {
  std::vector<TokenId> out;
  out.reserve(batch_size * seq_len);
  for (std::size_t b = 0; b < batch_size; ++b) {
    auto row = tokens.begin() + static_cast<std::ptrdiff_t>(b * (seq_len + 1));
    out.insert(out.end(), row, row + static_cast<std::ptrdiff_t>(seq_len));
  }
  return out;
}

std::vector<TokenId> Batch::targets() const {
  std::vector<TokenId> out;
  out.reserve(batch_size * seq_len);
  for (std::size_t b = 0; b < batch_size; ++b) {
    auto row = tokens.begin() + static_cast<std::ptrdiff_t>(b * (seq_len + 1) + 1);
    out.insert(out.end(), row, row + static_cast<std::ptrdiff_t>(seq_len));
  }
  return out;
}

void to_json(nlohmann::json& j, const StreamState& s) {
  j = {{"epoch", s.epoch}, {"batch_in_epoch", s.batch_in_epoch}};
}

void from_json(const nlohmann::json& j, StreamState& s) {
  s.epoch = j.at("epoch").get<std::uint64_t>();
  s.batch_in_epoch = j.at("batch_in_epoch").get<std::uint64_t>();
}

BatchStream::BatchStream(std::vector<std::vector<TokenId>> documents, BatchConfig cfg,
                         TokenId separator)
    : documents_(std::move(documents)), cfg_(cfg), separator_(separator) {
  if (cfg_.batch_size == 0 || cfg_.seq_len == 0) {
    throw ConfigError("batch stream: batch_size and seq_len must be positive");
  }
  std::erase_if(documents_, [](const auto& d) { return d.empty(); });
  if (documents_.empty()) throw ConfigError("batch stream: corpus is empty");
  for (const auto& d : documents_) stream_length_ += d.size();
  stream_length_ += documents_.size() - 1;  // separators
  windows_per_epoch_ = stream_length_ < 2 ? 0 : (stream_length_ - 1) / cfg_.seq_len;
  if (batches_per_epoch() == 0) {
    throw ConfigError("batch stream: corpus of " + std::to_string(stream_length_) +
                      " tokens is smaller than one batch of " +
                      std::to_string(cfg_.batch_size) + "x" +
                      std::to_string(cfg_.seq_len + 1));
  }
}

std::vector<std::size_t> BatchStream::document_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(documents_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed),
                    static_cast<std::uint32_t>(cfg_.seed >> 32),
                    static_cast<std::uint32_t>(epoch),
                    static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<TokenId> BatchStream::epoch_stream(std::uint64_t epoch) const {
  std::vector<TokenId> out;
  out.reserve(stream_length_);
  bool first = true;
  for (std::size_t idx : document_order(epoch)) {
    if (!first) out.push_back(separator_);
    first = false;
    out.insert(out.end(), documents_[idx].begin(), documents_[idx].end());
  }
  return out;
}

void BatchStream::load_epoch(std::uint64_t epoch) {
  if (loaded_epoch_ == epoch) return;
  current_ = epoch_stream(epoch);
  loaded_epoch_ = epoch;
}

void BatchStream::restore(const StreamState& state) {
  if (state.batch_in_epoch >= batches_per_epoch()) {
    throw ContractError("batch stream: cursor " + std::to_string(state.batch_in_epoch) +
                        " beyond " + std::to_string(batches_per_epoch()) +
                        " batches per epoch");
  }
  state_ = state;
}

Batch BatchStream::next() {
  load_epoch(state_.epoch);
  Batch batch;
  batch.batch_size = cfg_.batch_size;
  batch.seq_len = cfg_.seq_len;
  batch.tokens.reserve(cfg_.batch_size * (cfg_.seq_len + 1));
  const std::size_t first_window = state_.batch_in_epoch * cfg_.batch_size;
  for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
    const std::size_t start = (first_window + b) * cfg_.seq_len;
    auto it = current_.begin() + static_cast<std::ptrdiff_t>(start);
    batch.tokens.insert(batch.tokens.end(), it,
                        it + static_cast<std::ptrdiff_t>(cfg_.seq_len + 1));
  }
  if (++state_.batch_in_epoch == batches_per_epoch()) {
    state_.batch_in_epoch = 0;
    ++state_.epoch;
  }
  return batch;
}

}  // namespace ffnlab::data
