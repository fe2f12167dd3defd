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

#include "ffnlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "ffnlab/errors.hpp"
#include "ffnlab/tensor.hpp"

namespace ffnlab::eval {

template <typename T>
std::size_t TransformerLM<T>::vocab_size() const {
  return static_cast<std::size_t>(model_.config().vocab_size);
}

template <typename T>
std::size_t TransformerLM<T>::max_seq_len() const {
  return static_cast<std::size_t>(model_.config().max_seq_len);
}

template <typename T>
std::vector<double> TransformerLM<T>::logits(std::span<const TokenId> tokens) const {
  ad::NoGradGuard guard;
  ad::Tensor<T> out = model_.forward(tokens);
  const auto v = out.values();
  return std::vector<double>(v.begin(), v.end());
}

template class TransformerLM<float>;
template class TransformerLM<double>;

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::perplexity: return "perplexity";
    case TaskKind::multiple_choice: return "multiple_choice";
    case TaskKind::knowledge_qa: return "knowledge_qa";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "perplexity") return TaskKind::perplexity;
  if (s == "multiple_choice") return TaskKind::multiple_choice;
  if (s == "knowledge_qa") return TaskKind::knowledge_qa;
  throw ConfigError("unknown task kind '" + s + "'");
}

std::size_t EvalTask::size() const {
  switch (kind) {
    case TaskKind::perplexity: return texts.size();
    case TaskKind::multiple_choice: return choices.size();
    case TaskKind::knowledge_qa: return qa.size();
  }
  return 0;
}

void EvalTask::validate() const {
  auto fail = [&](const std::string& what) { throw ConfigError("task " + name + ": " + what); };
  if (size() == 0) fail("no items");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].text.empty()) fail("item " + std::to_string(i) + " has empty text");
  }
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const auto& c = choices[i];
    if (c.choices.size() < 2) fail("item " + std::to_string(i) + " has fewer than 2 choices");
    if (c.answer_index >= c.choices.size()) {
      fail("item " + std::to_string(i) + " answer_index " + std::to_string(c.answer_index) +
           " out of range");
    }
    for (const auto& s : c.choices) {
      if (s.empty()) fail("item " + std::to_string(i) + " has an empty choice");
    }
  }
  for (std::size_t i = 0; i < qa.size(); ++i) {
    if (qa[i].question.empty() || qa[i].answer.empty()) {
      fail("item " + std::to_string(i) + " has an empty question or answer");
    }
  }
}

namespace {

TaskKind infer_kind(const nlohmann::json& item) {
  if (item.contains("kind")) return task_kind_from_string(item["kind"].get<std::string>());
  if (item.contains("choices")) return TaskKind::multiple_choice;
  if (item.contains("question")) return TaskKind::knowledge_qa;
  if (item.contains("text")) return TaskKind::perplexity;
  throw ConfigError("cannot infer task kind from item " + item.dump());
}

}  // namespace

EvalTask load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read task file " + path.string());
  EvalTask task;
  task.name = path.stem().string();
  bool first = true;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto item = nlohmann::json::parse(line);
      if (first) {
        task.kind = infer_kind(item);
        first = false;
      }
      switch (task.kind) {
        case TaskKind::perplexity:
          task.texts.push_back({item.at("text").get<std::string>()});
          break;
        case TaskKind::multiple_choice:
          task.choices.push_back({item.value("context", std::string()),
                                  item.at("choices").get<std::vector<std::string>>(),
                                  item.at("answer_index").get<std::size_t>()});
          break;
        case TaskKind::knowledge_qa:
          task.qa.push_back({item.at("question").get<std::string>(),
                             item.at("answer").get<std::string>()});
          break;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  task.validate();
  return task;
}

std::vector<EvalTask> load_tasks(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw ConfigError("task path " + path.string() + " does not exist");
  if (!fs::is_directory(path)) return {load_task(path)};
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .jsonl task files in " + path.string());
  std::vector<EvalTask> tasks;
  for (const auto& f : files) tasks.push_back(load_task(f));
  return tasks;
}

double log_prob(std::span<const double> row, TokenId target) {
  if (target < 0 || static_cast<std::size_t>(target) >= row.size()) {
    throw IndexError("target " + std::to_string(target) + " outside vocabulary of " +
                     std::to_string(row.size()));
  }
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0;
  for (double v : row) z += std::exp(v - mx);
  return row[static_cast<std::size_t>(target)] - mx - std::log(z);
}

TokenId greedy_token(std::span<const double> row) {
  return static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
}

namespace {

std::span<const double> row_of(const std::vector<double>& logits, std::size_t i, std::size_t v) {
  return std::span<const double>(logits).subspan(i * v, v);
}

std::vector<double> checked_logits(const LanguageModel& m, std::span<const TokenId> tokens) {
  auto out = m.logits(tokens);
  if (out.size() != tokens.size() * m.vocab_size()) {
    throw DimensionError("model returned " + std::to_string(out.size()) + " logits for " +
                         std::to_string(tokens.size()) + " tokens");
  }
  return out;
}

}  // namespace

PerplexityResult perplexity(const LanguageModel& m,
                            std::span<const std::vector<TokenId>> sequences) {
  if (sequences.empty()) throw ContractError("perplexity: empty task");
  const std::size_t w = m.max_seq_len();
  const std::size_t v = m.vocab_size();
  if (w < 2) throw ContractError("perplexity: max_seq_len must be at least 2");
  PerplexityResult r;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) throw ContractError("perplexity: every text needs at least 2 tokens");
    for (std::size_t start = 0; start + 1 < seq.size(); start += w - 1) {
      const std::size_t len = std::min(w, seq.size() - start);
      std::span<const TokenId> window(seq.data() + start, len);
      const auto logits = checked_logits(m, window);
      for (std::size_t i = 0; i + 1 < len; ++i) {
        r.total_nll -= log_prob(row_of(logits, i, v), window[i + 1]);
        ++r.predicted_tokens;
      }
    }
  }
  r.ppl = std::exp(r.total_nll / static_cast<double>(r.predicted_tokens));
  return r;
}

ChoiceScore score_continuation(const LanguageModel& m, std::span<const TokenId> context,
                               std::span<const TokenId> continuation) {
  if (continuation.empty()) throw ContractError("score_continuation: empty continuation");
  const std::size_t w = m.max_seq_len();
  if (continuation.size() >= w) {
    throw ContractError("score_continuation: continuation of " +
                        std::to_string(continuation.size()) + " tokens does not fit max_seq_len " +
                        std::to_string(w));
  }
  std::vector<TokenId> seq;
  if (context.empty()) {
    seq.push_back(data::kBos);
  } else {
    const std::size_t keep = std::min(context.size(), w - continuation.size());
    seq.assign(context.end() - static_cast<std::ptrdiff_t>(keep), context.end());
  }
  const std::size_t ctx = seq.size();
  seq.insert(seq.end(), continuation.begin(), continuation.end());
  const auto logits = checked_logits(m, seq);
  ChoiceScore s;
  for (std::size_t j = 0; j < continuation.size(); ++j) {
    s.log_likelihood += log_prob(row_of(logits, ctx + j - 1, m.vocab_size()), continuation[j]);
  }
  s.tokens = continuation.size();
  return s;
}

std::size_t multiple_choice(const LanguageModel& m, std::span<const TokenId> context,
                            const std::vector<std::vector<TokenId>>& choices, bool normalize) {
  if (choices.size() < 2) throw ContractError("multiple_choice: need at least 2 choices");
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const ChoiceScore s = score_continuation(m, context, choices[i]);
    const double score = normalize ? s.normalized() : s.log_likelihood;
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

double knowledge_item_accuracy(const LanguageModel& m, std::span<const TokenId> question,
                               std::span<const TokenId> answer) {
  if (question.empty()) throw ContractError("knowledge_accuracy: empty question");
  if (answer.empty()) throw ContractError("knowledge_accuracy: empty answer");
  const std::size_t w = m.max_seq_len();
  std::size_t matched = 0;
  std::vector<TokenId> prompt(question.begin(), question.end());
  for (std::size_t i = 0; i < answer.size(); ++i) {
    std::span<const TokenId> window(prompt);
    if (window.size() > w) window = window.last(w);
    const auto logits = checked_logits(m, window);
    const TokenId guess = greedy_token(row_of(logits, window.size() - 1, m.vocab_size()));
    if (guess == answer[i]) ++matched;
    prompt.push_back(answer[i]);
  }
  return static_cast<double>(matched) / static_cast<double>(answer.size());
}

double knowledge_accuracy(
    const LanguageModel& m,
    const std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>>& items) {
  if (items.empty()) throw ContractError("knowledge_accuracy: empty task");
  double sum = 0;
  for (const auto& [q, a] : items) sum += knowledge_item_accuracy(m, q, a);
  return sum / static_cast<double>(items.size());
}

TaskResult evaluate_task(const LanguageModel& m, const data::Tokenizer& tok, const EvalTask& task,
                         const EvalOptions& options) {
  task.validate();
  TaskResult r;
  r.name = task.name;
  r.kind = task.kind;
  r.count = task.size();
  switch (task.kind) {
    case TaskKind::perplexity: {
      std::vector<std::vector<TokenId>> seqs;
      for (const auto& t : task.texts) seqs.push_back(tok.encode(t.text));
      r.metric = "ppl";
      r.value = perplexity(m, seqs).ppl;
      break;
    }
    case TaskKind::multiple_choice: {
      std::size_t correct = 0;
      double chance = 0;
      for (const auto& item : task.choices) {
        std::vector<std::vector<TokenId>> encoded;
        for (const auto& c : item.choices) encoded.push_back(tok.encode(c));
        const auto ctx = tok.encode(item.context);
        if (multiple_choice(m, ctx, encoded, options.normalize_choices) == item.answer_index) {
          ++correct;
        }
        chance += 1.0 / static_cast<double>(item.choices.size());
      }
      r.metric = "acc";
      r.value = static_cast<double>(correct) / static_cast<double>(r.count);
      r.chance = chance / static_cast<double>(r.count);
      r.below_chance = r.value < r.chance;
      break;
    }
    case TaskKind::knowledge_qa: {
      std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>> items;
      for (const auto& q : task.qa) items.emplace_back(tok.encode(q.question), tok.encode(q.answer));
      r.metric = "acc";
      r.value = knowledge_accuracy(m, items);
      // Open-ended generation has no guessing floor.
      r.chance = 0;
      r.below_chance = false;
      break;
    }
  }
  return r;
}

const TaskResult* EvalReport::find(const std::string& task) const {
  for (const auto& t : tasks) {
    if (t.name == task) return &t;
  }
  return nullptr;
}

EvalReport evaluate(const LanguageModel& m, const data::Tokenizer& tok,
                    const std::vector<EvalTask>& tasks, const EvalOptions& options) {
  EvalReport r;
  for (const auto& t : tasks) r.tasks.push_back(evaluate_task(m, tok, t, options));
  return r;
}

void to_json(nlohmann::json& j, const TaskResult& r) {
  j = {{"name", r.name},
       {"kind", to_string(r.kind)},
       {"metric", r.metric},
       {"value", r.value},
       {"count", r.count}};
  if (r.metric == "acc") {
    j["chance"] = r.chance;
    j["below_chance"] = r.below_chance;
  }
}

void from_json(const nlohmann::json& j, TaskResult& r) {
  r.name = j.at("name").get<std::string>();
  r.kind = task_kind_from_string(j.at("kind").get<std::string>());
  r.metric = j.at("metric").get<std::string>();
  r.value = j.at("value").get<double>();
  r.count = j.at("count").get<std::size_t>();
  r.chance = j.value("chance", 0.0);
  r.below_chance = j.value("below_chance", false);
  if (r.metric != "acc" && r.metric != "ppl") throw ConfigError("unknown metric " + r.metric);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"model_id", r.model_id},
       {"seed", r.seed},
       {"checkpoint_step", r.checkpoint_step},
       {"tasks", r.tasks}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.model_id = j.at("model_id").get<std::string>();
  r.seed = j.value("seed", std::uint64_t{0});
  r.checkpoint_step = j.value("checkpoint_step", std::int64_t{0});
  r.tasks = j.at("tasks").get<std::vector<TaskResult>>();
}

void write_report(const std::filesystem::path& path, const EvalReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json(r).dump(2) << '\n';
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in).get<EvalReport>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace ffnlab::eval
