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
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffnlab/model.hpp"
#include "ffnlab/tokenizer.hpp"

namespace ffnlab::eval {

// Anything that maps a token sequence to next-token logits. Row i of the
// result ([n, vocab_size], row-major) may depend only on tokens[0..i].
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_seq_len() const = 0;
  virtual std::vector<double> logits(std::span<const TokenId> tokens) const = 0;
};

template <typename T>
class TransformerLM final : public LanguageModel {
 public:
  explicit TransformerLM(const model::Transformer<T>& m) : model_(m) {}
  std::size_t vocab_size() const override;
  std::size_t max_seq_len() const override;
  std::vector<double> logits(std::span<const TokenId> tokens) const override;

 private:
  const model::Transformer<T>& model_;
};

enum class TaskKind { perplexity, multiple_choice, knowledge_qa };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

struct TextItem {
  std::string text;
};

struct ChoiceItem {
  std::string context;
  std::vector<std::string> choices;
  std::size_t answer_index = 0;
};

struct QaItem {
  std::string question;
  std::string answer;
};

struct EvalTask {
  std::string name;
  TaskKind kind = TaskKind::perplexity;
  std::vector<TextItem> texts;
  std::vector<ChoiceItem> choices;
  std::vector<QaItem> qa;

  std::size_t size() const;
  void validate() const;
};

// One JSON-lines file; the kind follows from the fields of the first item
// and the name from the file stem.
EvalTask load_task(const std::filesystem::path& path);
// A single .jsonl file or every *.jsonl in a directory, sorted by name.
std::vector<EvalTask> load_tasks(const std::filesystem::path& path);

// log softmax of one logit row, evaluated at `target`.
double log_prob(std::span<const double> row, TokenId target);

struct PerplexityResult {
  double ppl = 0;
  double total_nll = 0;
  std::size_t predicted_tokens = 0;
};

// Teacher-forced NLL over every position after the first. Sequences longer
// than max_seq_len are scored in consecutive windows that share one token,
// so every token after the first is predicted exactly once.
PerplexityResult perplexity(const LanguageModel& m,
                            std::span<const std::vector<TokenId>> sequences);

struct ChoiceScore {
  double log_likelihood = 0;
  std::size_t tokens = 0;
  double normalized() const { return log_likelihood / static_cast<double>(tokens); }
};

// Log-likelihood of `continuation` given `context`; the context is
// truncated from the left when the pair exceeds max_seq_len.
ChoiceScore score_continuation(const LanguageModel& m, std::span<const TokenId> context,
                               std::span<const TokenId> continuation);

// Argmax of the per-token mean log-likelihood (or the raw sum when
// `normalize` is false); ties go to the lowest index.
std::size_t multiple_choice(const LanguageModel& m, std::span<const TokenId> context,
                            const std::vector<std::vector<TokenId>>& choices,
                            bool normalize = true);

// Teacher-forced answer matching: at every answer position the model sees
// the question plus the gold answer prefix and greedily emits one token
// (lowest id on ties). Returns matched / answer length.
double knowledge_item_accuracy(const LanguageModel& m, std::span<const TokenId> question,
                               std::span<const TokenId> answer);

// Mean of knowledge_item_accuracy over items.
double knowledge_accuracy(const LanguageModel& m,
                          const std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>>& items);

TokenId greedy_token(std::span<const double> row);

struct EvalOptions {
  bool normalize_choices = true;
};

struct TaskResult {
  std::string name;
  TaskKind kind = TaskKind::perplexity;
  std::string metric;  // "ppl" or "acc"
  double value = 0;
  std::size_t count = 0;
  // Accuracy tasks only.
  double chance = 0;
  bool below_chance = false;
};

TaskResult evaluate_task(const LanguageModel& m, const data::Tokenizer& tok, const EvalTask& task,
                         const EvalOptions& options = {});

struct EvalReport {
  std::string model_id;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_step = 0;
  std::vector<TaskResult> tasks;

  const TaskResult* find(const std::string& task) const;
};

EvalReport evaluate(const LanguageModel& m, const data::Tokenizer& tok,
                    const std::vector<EvalTask>& tasks, const EvalOptions& options = {});

void to_json(nlohmann::json& j, const TaskResult& r);
void from_json(const nlohmann::json& j, TaskResult& r);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

void write_report(const std::filesystem::path& path, const EvalReport& r);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace ffnlab::eval
