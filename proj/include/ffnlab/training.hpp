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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffnlab/corpus.hpp"
#include "ffnlab/model.hpp"
#include "ffnlab/tokenizer.hpp"

namespace ffnlab::train {

enum class Scheduler { cosine, wsd };

std::string to_string(Scheduler s);
Scheduler scheduler_from_string(const std::string& name);

struct TrainConfig {
  std::int64_t total_steps = 500;
  std::int64_t warmup_steps = 50;
  double peak_lr = 3e-3;
  // Cosine floor and WSD end point, as a fraction of peak_lr.
  double min_lr_ratio = 0.1;
  Scheduler scheduler = Scheduler::cosine;
  // WSD: the final fraction of total_steps decays linearly to the floor.
  double wsd_decay_fraction = 0.1;
  std::size_t batch_size = 8;
  std::size_t seq_len = 64;
  double weight_decay = 0.1;
  double grad_clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  // 0 keeps only the final checkpoint.
  std::int64_t checkpoint_interval = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

// Learning rate for optimizer step `step` (1-based update count, 0 = before
// the first update).
double lr_at(std::int64_t step, const TrainConfig& cfg);

// First step of the WSD decay window.
std::int64_t wsd_decay_start(const TrainConfig& cfg);

template <typename T>
struct ParamSlot {
  std::string name;
  ad::Tensor<T> param;
  std::vector<T> m;
  std::vector<T> v;
  bool decay = true;
};

// Decoupled weight decay Adam with bias correction.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(std::vector<model::NamedTensor<T>> params,
                 const std::function<bool(const std::string&)>& decays);

  // One update from the current .grad of every parameter. Parameters
  // without a gradient are treated as having a zero gradient.
  void step(double lr, const TrainConfig& cfg);

  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }
  std::vector<ParamSlot<T>>& slots() { return slots_; }
  const std::vector<ParamSlot<T>>& slots() const { return slots_; }

 private:
  std::vector<ParamSlot<T>> slots_;
  std::int64_t t_ = 0;
};

// Norm gains and the token embedding are exempt from weight decay.
bool default_decays(const std::string& param_name);

template <typename T>
double global_grad_norm(const std::vector<ParamSlot<T>>& slots);

// Scales every gradient so the global norm is at most max_norm; returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<ParamSlot<T>>& slots, double max_norm);

struct StepRecord {
  std::int64_t step = 0;
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;
};

// Stable identity of everything a resumed run must share with the run that
// wrote the checkpoint: architecture, tokenizer, batch shape, seed and the
// tokenized corpus. Schedule and optimizer settings may change on resume.
std::string config_hash(const ModelConfig& model, const TrainConfig& cfg,
                        const data::Tokenizer& tok,
                        const std::vector<std::vector<TokenId>>& documents);

template <typename T>
class Trainer {
 public:
  Trainer(ModelConfig model_config, TrainConfig cfg, data::Tokenizer tok,
          std::vector<std::vector<TokenId>> documents);

  // Rejects checkpoints whose config hash differs from this run's.
  static Trainer resume(const std::filesystem::path& checkpoint, TrainConfig cfg,
                        data::Tokenizer tok, std::vector<std::vector<TokenId>> documents);

  StepRecord train_step(const data::Batch& batch);
  StepRecord step() { return train_step(stream_.next()); }

  void save_checkpoint(const std::filesystem::path& path) const;

  std::int64_t current_step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  void set_config(const TrainConfig& cfg);
  const model::Transformer<T>& model() const { return model_; }
  model::Transformer<T>& model() { return model_; }
  const AdamW<T>& optimizer() const { return opt_; }
  const std::vector<StepRecord>& history() const { return history_; }
  const data::BatchStream& stream() const { return stream_; }
  const data::Tokenizer& tokenizer() const { return tok_; }
  const std::string& hash() const { return hash_; }

 private:
  Trainer(model::Transformer<T> model, TrainConfig cfg, data::Tokenizer tok,
          std::vector<std::vector<TokenId>> documents);

  model::Transformer<T> model_;
  TrainConfig cfg_;
  data::Tokenizer tok_;
  data::BatchStream stream_;
  AdamW<T> opt_;
  std::int64_t step_ = 0;
  std::vector<StepRecord> history_;
  std::string hash_;
};

struct RunOptions {
  std::filesystem::path out_dir;
  // Stop after this step instead of total_steps.
  std::optional<std::int64_t> stop_at;
  // Continue from this checkpoint (or from out_dir/checkpoint.ckpt when
  // resume_latest is set and that file exists).
  std::optional<std::filesystem::path> resume_from;
  bool resume_latest = false;
  std::function<void(const StepRecord&)> on_step;
};

struct RunResult {
  std::int64_t final_step = 0;
  std::vector<StepRecord> history;
  std::filesystem::path checkpoint;
};

// Trains in f32, writing out_dir/train_log.csv (step,lr,loss,grad_norm),
// periodic out_dir/checkpoints/step_<k>.ckpt and out_dir/checkpoint.ckpt.
RunResult run_training(const ModelConfig& model_config, const TrainConfig& cfg,
                       const data::Tokenizer& tok,
                       const std::vector<std::vector<TokenId>>& documents,
                       const RunOptions& options);

std::string format_number(double v);
void write_log_csv(const std::filesystem::path& path, const std::vector<StepRecord>& records);

}  // namespace ffnlab::train
