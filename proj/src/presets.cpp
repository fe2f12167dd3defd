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

#include "ffnlab/presets.hpp"

#include "ffnlab/errors.hpp"
#include "ffnlab/tokenizer.hpp"

namespace ffnlab::presets {

namespace {

constexpr std::int64_t kGpt2Vocab = 50257;

train::TrainConfig full_scale(double lr) {
  train::TrainConfig c;
  c.total_steps = 20000;
  c.warmup_steps = 1000;
  c.peak_lr = lr;
  c.scheduler = train::Scheduler::cosine;
  c.seq_len = 1024;
  c.batch_size = 8;
  return c;
}

}  // namespace

const std::vector<ModelPreset>& model_presets() {
  static const std::vector<ModelPreset> presets = [] {
    const auto byte_vocab = static_cast<std::int64_t>(data::kByteVocabSize);
    return std::vector<ModelPreset>{
        {"285m-12l", make_baseline_config(12, 1280, 20, 4480, kGpt2Vocab, 1024), "full scale"},
        {"570m-24l", make_baseline_config(24, 1280, 20, 4480, kGpt2Vocab, 1024), "full scale"},
        {"570m-40l", make_baseline_config(40, 992, 16, 3472, kGpt2Vocab, 1024), "full scale"},
        {"1.2b-40l", make_baseline_config(40, 1440, 20, 5040, kGpt2Vocab, 1024), "full scale"},
        {"desk-12l", make_baseline_config(12, 64, 4, 224, byte_vocab, 128), "desk scale"},
        {"desk-8l", make_baseline_config(8, 48, 4, 168, byte_vocab, 128), "desk scale"},
        {"desk-6l", make_baseline_config(6, 32, 4, 112, byte_vocab, 128), "desk scale"},
    };
  }();
  return presets;
}

const std::vector<TrainPreset>& train_presets() {
  static const std::vector<TrainPreset> presets = [] {
    train::TrainConfig desk;
    desk.total_steps = 800;
    desk.warmup_steps = 50;
    desk.peak_lr = 3e-3;
    desk.batch_size = 4;
    desk.seq_len = 32;
    return std::vector<TrainPreset>{
        {"285m-12l", full_scale(3e-4), 288},
        {"570m-24l", full_scale(3e-4), 560},
        {"570m-40l", full_scale(1e-4), 560},
        {"1.2b-40l", full_scale(1e-4), 1152},
        {"desk", desk, 4},
    };
  }();
  return presets;
}

std::string preset_names() {
  std::string out;
  for (const auto& p : model_presets()) out += (out.empty() ? "" : ", ") + p.name;
  return out;
}

const ModelPreset& model_preset(const std::string& name) {
  for (const auto& p : model_presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown preset '" + name + "'; available: " + preset_names());
}

const TrainPreset& train_preset(const std::string& name) {
  std::string names;
  for (const auto& p : train_presets()) {
    if (p.name == name) return p;
    names += (names.empty() ? "" : ", ") + p.name;
  }
  throw ConfigError("unknown train preset '" + name + "'; available: " + names);
}

}  // namespace ffnlab::presets
