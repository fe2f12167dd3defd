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

#include "ffnlab/synthetic.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <set>

#include "ffnlab/errors.hpp"

namespace ffnlab::data {

namespace {

constexpr std::array kSyllables = {"ka", "lo", "mi", "ra", "tu", "ne", "si", "vo",
                                   "pe", "da", "ri", "zu", "ba", "no", "te", "gi"};
constexpr std::array kColors = {"red", "blue", "green", "yellow", "black", "white",
                                "purple", "orange"};
constexpr std::array kAnimals = {"fox", "owl", "bear", "crane", "wolf", "hare",
                                 "otter", "lynx", "heron", "badger"};
constexpr std::array kAdjectives = {"quiet", "old", "small", "bright", "tired",
                                    "clever", "slow", "happy"};
constexpr std::array kNouns = {"farmer", "river", "child", "boat", "teacher",
                               "garden", "horse", "window", "baker", "stone"};
constexpr std::array kVerbs = {"watches", "finds", "follows", "paints", "carries",
                               "visits", "hears", "builds"};

// Uniform pick driven by a splitmix64 stream, so results do not depend on
// the standard library's distribution implementations.
std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t pick(std::uint64_t& state, std::size_t n) {
  return static_cast<std::size_t>(splitmix(state) % n);
}

std::string pseudo_word(std::uint64_t& state, std::size_t syllables) {
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) w += kSyllables[pick(state, kSyllables.size())];
  return w;
}

}  // namespace

SyntheticWorld::SyntheticWorld(std::uint64_t seed, std::size_t n_facts) {
  std::uint64_t state = seed ^ 0x5eedf00dULL;
  std::set<std::string> used;
  auto fresh = [&](std::size_t syllables) {
    for (;;) {
      std::string w = pseudo_word(state, syllables);
      if (used.insert(w).second) return w;
    }
  };
  objects_by_relation_.resize(3);
  std::vector<std::string> cities;
  for (int i = 0; i < 12; ++i) cities.push_back(fresh(3));
  objects_by_relation_[0] = cities;
  objects_by_relation_[1].assign(kColors.begin(), kColors.end());
  objects_by_relation_[2].assign(kAnimals.begin(), kAnimals.end());
  for (std::size_t i = 0; i < n_facts; ++i) {
    const std::size_t rel = i % 3;
    const std::string subject = fresh(3);
    Fact f;
    f.relation = rel;
    const auto& objects = objects_by_relation_[rel];
    f.object = objects[pick(state, objects.size())];
    switch (rel) {
      case 0:
        f.prompt = "the capital of " + subject + " is";
        break;
      case 1:
        f.prompt = "the favorite color of " + subject + " is";
        break;
      default:
        f.prompt = "the emblem of " + subject + " is the";
        break;
    }
    facts_.push_back(std::move(f));
  }
}

std::string SyntheticWorld::document(std::uint64_t& state, std::size_t sentences) const {
  std::string doc;
  for (std::size_t s = 0; s < sentences; ++s) {
    if (!doc.empty()) doc += ' ';
    if (pick(state, 2) == 0) {
      const Fact& f = facts_[pick(state, facts_.size())];
      doc += f.prompt + " " + f.object + ".";
    } else {
      doc += std::string("the ") + kAdjectives[pick(state, kAdjectives.size())] + " " +
             kNouns[pick(state, kNouns.size())] + " " + kVerbs[pick(state, kVerbs.size())] +
             " the " + kNouns[pick(state, kNouns.size())] + ".";
    }
  }
  return doc;
}

Corpus SyntheticWorld::corpus(std::size_t target_bytes, std::uint64_t seed) const {
  std::uint64_t state = seed ^ 0xc0ffeeULL;
  Corpus c;
  std::size_t bytes = 0;
  while (bytes < target_bytes) {
    c.documents.push_back(document(state, 6 + pick(state, 7)));
    bytes += c.documents.back().size();
  }
  return c;
}

std::vector<nlohmann::json> SyntheticWorld::text_items(std::size_t n, std::uint64_t seed) const {
  std::uint64_t state = seed ^ 0x7e47ULL;
  std::vector<nlohmann::json> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({{"text", document(state, 3 + pick(state, 3))}});
  }
  return out;
}

std::vector<nlohmann::json> SyntheticWorld::choice_items(std::size_t n_choices,
                                                         std::uint64_t seed) const {
  std::uint64_t state = seed ^ 0xc401ceULL;
  std::vector<nlohmann::json> out;
  for (const Fact& f : facts_) {
    const auto& pool = objects_by_relation_[f.relation];
    std::vector<std::string> distractors;
    for (const auto& o : pool) {
      if (o != f.object) distractors.push_back(o);
    }
    // Partial Fisher-Yates for the distractors we need.
    const std::size_t k = std::min(n_choices - 1, distractors.size());
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(distractors[i], distractors[i + pick(state, distractors.size() - i)]);
    }
    std::vector<std::string> choices(distractors.begin(),
                                     distractors.begin() + static_cast<std::ptrdiff_t>(k));
    const std::size_t answer = pick(state, k + 1);
    choices.insert(choices.begin() + static_cast<std::ptrdiff_t>(answer), f.object);
    for (auto& c : choices) c = " " + c;
    out.push_back({{"context", f.prompt}, {"choices", choices}, {"answer_index", answer}});
  }
  return out;
}

std::vector<nlohmann::json> SyntheticWorld::qa_items() const {
  std::vector<nlohmann::json> out;
  for (const Fact& f : facts_) out.push_back({{"question", f.prompt}, {"answer", " " + f.object}});
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& items) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& item : items) out << item.dump() << '\n';
}

void write_synthetic_bundle(const std::filesystem::path& dir, std::uint64_t seed,
                            std::size_t corpus_bytes) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "tasks", ec);
  if (ec) throw IoError("cannot create " + (dir / "tasks").string() + ": " + ec.message());
  SyntheticWorld world(seed);
  std::vector<nlohmann::json> docs;
  for (const auto& d : world.corpus(corpus_bytes, seed).documents) docs.push_back({{"text", d}});
  write_jsonl(dir / "corpus.jsonl", docs);
  write_jsonl(dir / "tasks" / "synth_text.jsonl", world.text_items(24, seed + 1));
  write_jsonl(dir / "tasks" / "synth_choice.jsonl", world.choice_items(4, seed + 2));
  write_jsonl(dir / "tasks" / "synth_qa.jsonl", world.qa_items());
}

}  // namespace ffnlab::data
