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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffnlab/evaluation.hpp"
#include "ffnlab/placement.hpp"

namespace ffnlab::analysis {

enum class MetricKind { accuracy, loss };

std::string to_string(MetricKind k);
// "acc" is accuracy-based; "ppl" and "loss" are loss-based.
MetricKind metric_kind_of(const std::string& metric);

// Sign-corrected percent change; positive always means better.
double relative_improvement(double metric, double baseline, MetricKind kind);

struct RIRow {
  std::string config_id;
  placement::Position position = placement::Position::baseline;
  int ratio_percent = 100;
  std::string task;
  std::string metric;
  MetricKind kind = MetricKind::accuracy;
  double value = 0;
  double baseline_value = 0;
  double ri = 0;
  bool below_chance = false;
};

struct ConfigRef {
  std::string id;
  placement::Position position = placement::Position::baseline;
  int ratio_percent = 100;
};

struct RITable {
  std::vector<ConfigRef> configs;  // position-major, ratio ascending
  std::vector<std::string> tasks;  // baseline report order
  std::vector<RIRow> rows;
  std::map<std::string, eval::TaskResult> baseline;

  const RIRow* find(const std::string& config_id, const std::string& task) const;
};

struct RunReport {
  ConfigRef config;
  eval::EvalReport report;
};

// Rows for every (run, task) pair present in both the run and the baseline,
// plus <position>_100 rows copied from the baseline for each position that
// appears among the runs.
RITable build_ri_table(const eval::EvalReport& baseline, const std::vector<RunReport>& runs);

struct AverageOptions {
  std::vector<std::string> include;  // empty = every task
  std::vector<std::string> exclude;
  // Drops a task when the baseline or any configuration scores it below
  // chance.
  bool exclude_below_chance = true;
};

struct AverageRI {
  std::vector<std::string> tasks;                  // tasks averaged
  std::map<std::string, std::string> excluded;     // task -> reason
  std::vector<std::pair<ConfigRef, double>> mean;  // table config order

  std::optional<double> find(const std::string& config_id) const;
};

AverageRI average_ri(const RITable& table, const AverageOptions& options = {});

struct LayerScore {
  int layer = 0;      // 1-based
  int count = 0;      // configurations that deactivate this layer
  std::optional<double> raw;
  std::optional<double> standardized;
};

struct ImportanceVector {
  std::vector<LayerScore> layers;
  double mu = 0;
  double sigma = 0;
  bool degenerate = false;  // sigma == 0; standardized scores set to 0
  std::vector<std::string> warnings;

  std::vector<double> standardized_values() const;
};

// Each deactivated layer of configuration c receives -avg_ri(c) / |D_c|;
// a layer's raw score is the mean of what it received, and raw scores are
// standardized with the population mean and deviation over scored layers.
// Plans without an average are skipped with a warning.
ImportanceVector layer_importance(const std::map<std::string, double>& avg_ri_by_config,
                                  const std::vector<placement::PlacementPlan>& plans,
                                  int n_layers);

std::map<std::string, double> as_map(const AverageRI& avg);

nlohmann::json summary_json(const RITable& table, const AverageRI& avg,
                            const std::optional<ImportanceVector>& importance);

// report.csv, avg_ri.csv, importance.csv, summary.json and plots/*.svg under
// dir. Returns notices (skipped plots and importance warnings).
std::vector<std::string> emit_report(const std::filesystem::path& dir, const RITable& table,
                                     const AverageRI& avg,
                                     const std::optional<ImportanceVector>& importance);

std::string render_ri_svg(const RITable& table, const std::string& task);
std::string render_importance_svg(const ImportanceVector& importance);

struct AnalysisInputs {
  eval::EvalReport baseline;
  std::vector<RunReport> runs;
  std::vector<placement::PlacementPlan> plans;
  int n_layers = 0;
};

// Pairs every report in reports_dir with the plan of the same id in
// plans_dir. The "baseline" report is required.
AnalysisInputs load_inputs(const std::filesystem::path& reports_dir,
                           const std::filesystem::path& plans_dir);

struct AnalysisResult {
  RITable table;
  AverageRI average;
  std::optional<ImportanceVector> importance;
  std::vector<std::string> notices;
};

AnalysisResult analyze(const AnalysisInputs& inputs, const AverageOptions& options,
                       const std::filesystem::path& out_dir);

}  // namespace ffnlab::analysis
