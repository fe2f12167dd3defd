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

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffnlab/analysis.hpp"
#include "ffnlab/placement.hpp"
#include "ffnlab/tokenizer.hpp"
#include "ffnlab/training.hpp"

namespace ffnlab::sweep {

struct TokenizerSpec {
  std::string kind = "byte";          // "byte", "bpe" (trained on the corpus) or "file"
  std::size_t vocab_size = 0;         // bpe
  std::filesystem::path path;         // file
};

struct ExperimentSpec {
  std::string preset;                 // or an explicit model
  std::optional<ModelConfig> model;
  std::vector<placement::Position> positions{placement::kPositions[0], placement::kPositions[1],
                                             placement::kPositions[2]};
  std::vector<int> ratios{10, 30, 50, 70, 90};
  placement::ParityRounding parity_rounding = placement::ParityRounding::ceil;
  train::TrainConfig train;
  std::filesystem::path corpus;
  std::vector<std::filesystem::path> tasks;
  std::filesystem::path output_root;
  std::uint64_t seed = 0;
  int jobs = 1;
  TokenizerSpec tokenizer;
  analysis::AverageOptions average;

  ModelConfig base_model() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
// Relative paths resolve against base_dir.
ExperimentSpec spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentSpec load_spec(const std::filesystem::path& path);

// FFNLAB_OUTPUT_ROOT fills an empty output_root; FFNLAB_THREADS overrides jobs.
void apply_environment(ExperimentSpec& spec);

// Plans in run order: baseline first, then position-major, ratio ascending.
// Ratio 100 is served by the baseline and yields no plan of its own.
std::vector<placement::PlacementPlan> sweep_plans(const ExperimentSpec& spec);

struct RunStatus {
  std::string id;
  std::string status;  // "pending", "completed" or "failed"
  std::string error;
  std::int64_t final_step = 0;
};

struct SweepResult {
  std::vector<RunStatus> runs;
  std::optional<analysis::AnalysisResult> analysis;
  std::vector<std::string> notices;
};

struct SweepOptions {
  std::function<void(const std::string&)> log;
};

// Trains, evaluates and analyzes every configuration under output_root:
// manifest.json, plans/<id>.json, runs/<id>/, reports/<id>.json, analysis/.
// Completed runs recorded in the manifest are skipped; partial runs resume
// from their last checkpoint. A failed run is recorded and the sweep goes on.
SweepResult run_sweep(const ExperimentSpec& spec, const SweepOptions& options = {});

data::Tokenizer build_tokenizer(const TokenizerSpec& spec, const std::vector<std::string>& documents);

}  // namespace ffnlab::sweep
