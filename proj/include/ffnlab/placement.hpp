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

// Which layers of an L-layer model carry an expanded FFN, which carry none,
// and how wide the expanded FFNs must be so the parameter total matches the
// all-standard baseline.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffnlab/model.hpp"

namespace ffnlab::placement {

enum class Position { first, middle, final, baseline };

std::string to_string(Position p);
Position position_from_string(const std::string& name);

inline constexpr int kRatios[] = {10, 30, 50, 70, 90, 100};
inline constexpr Position kPositions[] = {Position::first, Position::middle,
                                          Position::final};

// ceil: smallest d'_f with param_delta >= 0. nearest: the d'_f with the
// smallest |param_delta| (ties go up), for small models where one unit of
// d'_f is a large fraction of the total.
enum class ParityRounding { ceil, nearest };

std::string to_string(ParityRounding r);
ParityRounding parity_rounding_from_string(const std::string& name);

struct PlacementConfig {
  Position position = Position::baseline;
  int ratio_percent = 100;
  ModelConfig base;  // all-standard baseline
  ParityRounding rounding = ParityRounding::ceil;
};

struct PlacementPlan {
  Position position = Position::baseline;
  int ratio_percent = 100;
  std::vector<int> expanded_indices;  // 1-based, ascending, consecutive
  std::int64_t d_f_expanded = 0;
  ParityRounding rounding = ParityRounding::ceil;
  ModelConfig config;  // the experimental architecture
  std::int64_t baseline_params = 0;  // non-embedding
  std::int64_t plan_params = 0;      // non-embedding
  std::int64_t param_delta = 0;      // plan_params - baseline_params

  // "middle_30", or "baseline" for the baseline architecture.
  std::string id() const;
  bool is_baseline() const { return position == Position::baseline; }
  std::vector<int> deactivated_indices() const;
};

// floor(r * L / 100) in integer arithmetic; r in (0, 100].
int expanded_count(int n_layers, int ratio_percent);

// 1-based indices of the n consecutive expanded layers. `middle` puts
// ceil((L - n) / 2) deactivated layers in front of the block.
std::vector<int> place(int n_layers, int n, Position position);

// Width of the n expanded FFNs that matches the parameters of the L standard
// FFN sublayers (each expanded layer keeps its FFN norm gain, each
// deactivated one gives it up).
std::int64_t solve_parity_dim(const ModelConfig& base, int n,
                              ParityRounding rounding = ParityRounding::ceil);

PlacementPlan build_plan(const PlacementConfig& cfg);

// The baseline plan followed by every (position, ratio < 100) plan,
// position-major. Ratios with zero expanded layers for this depth are skipped.
std::vector<PlacementPlan> build_all_plans(const ModelConfig& base,
                                           ParityRounding rounding = ParityRounding::ceil);

nlohmann::json plan_to_json(const PlacementPlan& plan);
PlacementPlan plan_from_json(const nlohmann::json& j);

// Fixed-width table of the per-layer architecture and parity summary.
std::string format_plan_table(const PlacementPlan& plan);

}  // namespace ffnlab::placement
