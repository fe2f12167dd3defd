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

#include <optional>
#include <string>
#include <vector>

#include "ffnlab/model.hpp"
#include "ffnlab/training.hpp"

namespace ffnlab::presets {

struct ModelPreset {
  std::string name;
  ModelConfig config;
  std::string note;
};

struct TrainPreset {
  std::string name;
  train::TrainConfig config;
  // Sequences per optimizer step at full scale; desk runs use config.batch_size.
  std::int64_t global_batch = 0;
};

const std::vector<ModelPreset>& model_presets();
const std::vector<TrainPreset>& train_presets();

// ConfigError listing the available names when `name` is unknown.
const ModelPreset& model_preset(const std::string& name);
const TrainPreset& train_preset(const std::string& name);

std::string preset_names();

}  // namespace ffnlab::presets
