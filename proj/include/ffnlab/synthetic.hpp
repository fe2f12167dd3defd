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

// A small seeded world of made-up facts and filler prose used to build
// desk-scale corpora and task files whose answers are learnable from the
// corpus.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffnlab/corpus.hpp"

namespace ffnlab::data {

struct Fact {
  std::string prompt;  // "the capital of lomira is"
  std::string object;  // "tukasi"
  std::size_t relation = 0;
};

class SyntheticWorld {
 public:
  explicit SyntheticWorld(std::uint64_t seed, std::size_t n_facts = 48);

  const std::vector<Fact>& facts() const { return facts_; }

  Corpus corpus(std::size_t target_bytes, std::uint64_t seed) const;

  // Task records in the task-file schemas.
  std::vector<nlohmann::json> text_items(std::size_t n, std::uint64_t seed) const;
  std::vector<nlohmann::json> choice_items(std::size_t n_choices, std::uint64_t seed) const;
  std::vector<nlohmann::json> qa_items() const;

 private:
  std::string document(std::uint64_t& state, std::size_t sentences) const;

  std::vector<Fact> facts_;
  std::vector<std::vector<std::string>> objects_by_relation_;
};

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& items);

// Writes corpus.jsonl plus tasks/{synth_text,synth_choice,synth_qa}.jsonl.
void write_synthetic_bundle(const std::filesystem::path& dir, std::uint64_t seed,
                            std::size_t corpus_bytes);

}  // namespace ffnlab::data
