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

#include "ffnlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "ffnlab/errors.hpp"

namespace ffnlab::analysis {

std::string to_string(MetricKind k) { return k == MetricKind::accuracy ? "accuracy" : "loss"; }

MetricKind metric_kind_of(const std::string& metric) {
  if (metric == "acc") return MetricKind::accuracy;
  if (metric == "ppl" || metric == "loss") return MetricKind::loss;
  throw ConfigError("unknown metric '" + metric + "'");
}

double relative_improvement(double metric, double baseline, MetricKind kind) {
  if (baseline == 0) throw ContractError("relative_improvement: baseline metric is zero");
  const double s = kind == MetricKind::accuracy ? 1.0 : -1.0;
  // + 0.0 turns a negative zero into zero.
  return s * (metric - baseline) / baseline * 100.0 + 0.0;
}

const RIRow* RITable::find(const std::string& config_id, const std::string& task) const {
  for (const auto& r : rows) {
    if (r.config_id == config_id && r.task == task) return &r;
  }
  return nullptr;
}

namespace {

int position_rank(placement::Position p) { return static_cast<int>(p); }

bool config_less(const ConfigRef& a, const ConfigRef& b) {
  if (a.position != b.position) return position_rank(a.position) < position_rank(b.position);
  return a.ratio_percent < b.ratio_percent;
}

}  // namespace

RITable build_ri_table(const eval::EvalReport& baseline, const std::vector<RunReport>& runs) {
  RITable t;
  for (const auto& r : baseline.tasks) {
    if (t.baseline.count(r.name)) throw ConfigError("baseline reports task " + r.name + " twice");
    t.baseline[r.name] = r;
    t.tasks.push_back(r.name);
  }

  std::set<std::string> seen;
  std::set<placement::Position> positions;
  for (const auto& run : runs) {
    if (run.config.position == placement::Position::baseline) {
      throw ConfigError("build_ri_table: the baseline is passed separately");
    }
    if (!seen.insert(run.config.id).second) throw ConfigError("duplicate config " + run.config.id);
    t.configs.push_back(run.config);
    positions.insert(run.config.position);
  }
  for (auto p : positions) {
    ConfigRef full{placement::to_string(p) + "_100", p, 100};
    if (seen.insert(full.id).second) t.configs.push_back(full);
  }
  std::stable_sort(t.configs.begin(), t.configs.end(), config_less);

  for (const auto& cfg : t.configs) {
    const eval::EvalReport* report = nullptr;
    for (const auto& run : runs) {
      if (run.config.id == cfg.id) report = &run.report;
    }
    if (report == nullptr) report = &baseline;  // ratio 100 reuses the baseline run
    for (const auto& task : t.tasks) {
      const eval::TaskResult* res = report->find(task);
      if (res == nullptr) continue;
      const auto& base = t.baseline.at(task);
      if (res->metric != base.metric) {
        throw ConfigError("task " + task + " uses metric " + res->metric + " in " + cfg.id +
                          " but " + base.metric + " in the baseline");
      }
      RIRow row;
      row.config_id = cfg.id;
      row.position = cfg.position;
      row.ratio_percent = cfg.ratio_percent;
      row.task = task;
      row.metric = res->metric;
      row.kind = metric_kind_of(res->metric);
      row.value = res->value;
      row.baseline_value = base.value;
      row.ri = relative_improvement(res->value, base.value, row.kind);
      row.below_chance = res->below_chance;
      t.rows.push_back(row);
    }
  }
  return t;
}

std::optional<double> AverageRI::find(const std::string& config_id) const {
  for (const auto& [cfg, v] : mean) {
    if (cfg.id == config_id) return v;
  }
  return std::nullopt;
}

AverageRI average_ri(const RITable& table, const AverageOptions& options) {
  AverageRI out;
  for (const auto& name : options.include) {
    if (!table.baseline.count(name)) throw ConfigError("average_ri: unknown task " + name);
  }
  for (const auto& task : table.tasks) {
    if (!options.include.empty() &&
        std::find(options.include.begin(), options.include.end(), task) == options.include.end()) {
      continue;
    }
    if (std::find(options.exclude.begin(), options.exclude.end(), task) != options.exclude.end()) {
      out.excluded[task] = "excluded by request";
      continue;
    }
    if (options.exclude_below_chance) {
      std::string offender;
      if (table.baseline.at(task).below_chance) offender = "baseline";
      for (const auto& r : table.rows) {
        if (offender.empty() && r.task == task && r.below_chance) offender = r.config_id;
      }
      if (!offender.empty()) {
        out.excluded[task] = "below chance in " + offender;
        continue;
      }
    }
    out.tasks.push_back(task);
  }

  std::vector<std::string> missing;
  for (const auto& cfg : table.configs) {
    for (const auto& task : out.tasks) {
      if (!table.find(cfg.id, task)) missing.push_back("(" + cfg.id + ", " + task + ")");
    }
  }
  if (!missing.empty()) {
    std::string msg = "average_ri: missing cells";
    for (const auto& m : missing) msg += " " + m;
    throw ContractError(msg);
  }
  if (out.tasks.empty()) throw ContractError("average_ri: no tasks left to average");

  for (const auto& cfg : table.configs) {
    double sum = 0;
    for (const auto& task : out.tasks) sum += table.find(cfg.id, task)->ri;
    out.mean.emplace_back(cfg, sum / static_cast<double>(out.tasks.size()));
  }
  return out;
}

std::map<std::string, double> as_map(const AverageRI& avg) {
  std::map<std::string, double> m;
  for (const auto& [cfg, v] : avg.mean) m[cfg.id] = v;
  return m;
}

std::vector<double> ImportanceVector::standardized_values() const {
  std::vector<double> v;
  for (const auto& l : layers) {
    if (l.standardized) v.push_back(*l.standardized);
  }
  return v;
}

ImportanceVector layer_importance(const std::map<std::string, double>& avg_ri_by_config,
                                  const std::vector<placement::PlacementPlan>& plans,
                                  int n_layers) {
  if (n_layers <= 0) throw ContractError("layer_importance: n_layers must be positive");
  ImportanceVector iv;
  std::vector<double> sum(static_cast<std::size_t>(n_layers), 0.0);
  std::vector<int> count(static_cast<std::size_t>(n_layers), 0);
  for (const auto& plan : plans) {
    const auto deactivated = plan.deactivated_indices();
    if (deactivated.empty()) continue;
    if (plan.config.n_layers != n_layers) {
      throw DimensionError("layer_importance: plan " + plan.id() + " has " +
                           std::to_string(plan.config.n_layers) + " layers, expected " +
                           std::to_string(n_layers));
    }
    auto it = avg_ri_by_config.find(plan.id());
    if (it == avg_ri_by_config.end()) {
      iv.warnings.push_back("configuration " + plan.id() + " has no average RI; left out");
      continue;
    }
    const double share = -it->second / static_cast<double>(deactivated.size());
    for (int l : deactivated) {
      sum[static_cast<std::size_t>(l - 1)] += share;
      count[static_cast<std::size_t>(l - 1)] += 1;
    }
  }

  std::vector<double> raw;
  for (int l = 1; l <= n_layers; ++l) {
    LayerScore s;
    s.layer = l;
    s.count = count[static_cast<std::size_t>(l - 1)];
    if (s.count > 0) {
      s.raw = sum[static_cast<std::size_t>(l - 1)] / s.count;
      raw.push_back(*s.raw);
    }
    iv.layers.push_back(s);
  }
  if (raw.empty()) return iv;

  double mu = 0;
  for (double r : raw) mu += r;
  mu /= static_cast<double>(raw.size());
  double var = 0;
  for (double r : raw) var += (r - mu) * (r - mu);
  var /= static_cast<double>(raw.size());
  iv.mu = mu;
  iv.sigma = std::sqrt(var);
  // Identical raw scores can leave a rounding-level spread after the mean.
  double scale = 0;
  for (double r : raw) scale = std::max(scale, std::abs(r));
  iv.degenerate = !(iv.sigma > 1e-12 * scale);
  if (iv.degenerate) iv.warnings.push_back("raw importance has zero spread; standardized scores set to 0");
  for (auto& s : iv.layers) {
    if (!s.raw) continue;
    s.standardized = iv.degenerate ? 0.0 : (*s.raw - mu) / iv.sigma;
  }
  return iv;
}

namespace {

nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path> json_files(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

AnalysisInputs load_inputs(const std::filesystem::path& reports_dir,
                           const std::filesystem::path& plans_dir) {
  AnalysisInputs in;
  std::map<std::string, placement::PlacementPlan> plans;
  for (const auto& f : json_files(plans_dir)) {
    auto plan = placement::plan_from_json(read_json(f));
    plans[plan.id()] = plan;
  }
  bool have_baseline = false;
  for (const auto& f : json_files(reports_dir)) {
    eval::EvalReport r = eval::read_report(f);
    if (r.model_id == "baseline") {
      in.baseline = r;
      have_baseline = true;
      continue;
    }
    auto it = plans.find(r.model_id);
    if (it == plans.end()) throw ConfigError("report " + f.string() + " has no plan " + r.model_id);
    in.runs.push_back({{r.model_id, it->second.position, it->second.ratio_percent}, r});
  }
  if (!have_baseline) throw ConfigError("no baseline report in " + reports_dir.string());
  for (auto& [id, plan] : plans) {
    if (in.n_layers == 0) in.n_layers = plan.config.n_layers;
    if (plan.config.n_layers != in.n_layers) throw ConfigError("plans disagree on model depth");
    in.plans.push_back(plan);
  }
  if (in.n_layers == 0) throw ConfigError("no plans in " + plans_dir.string());
  return in;
}

AnalysisResult analyze(const AnalysisInputs& inputs, const AverageOptions& options,
                       const std::filesystem::path& out_dir) {
  AnalysisResult res;
  res.table = build_ri_table(inputs.baseline, inputs.runs);
  res.average = average_ri(res.table, options);
  bool any_deactivated = false;
  for (const auto& p : inputs.plans) any_deactivated |= !p.deactivated_indices().empty();
  if (any_deactivated) {
    res.importance = layer_importance(as_map(res.average), inputs.plans, inputs.n_layers);
  }
  res.notices = emit_report(out_dir, res.table, res.average, res.importance);
  return res;
}

}  // namespace ffnlab::analysis
