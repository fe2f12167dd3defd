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

#include "ffnlab/placement.hpp"

#include <algorithm>

#include <sstream>

#include "ffnlab/errors.hpp"

namespace ffnlab::placement {

std::string to_string(Position p) {
  switch (p) {
    case Position::first:
      return "first";
    case Position::middle:
      return "middle";
    case Position::final:
      return "final";
    case Position::baseline:
      return "baseline";
  }
  return "unknown";
}

Position position_from_string(const std::string& name) {
  if (name == "first") return Position::first;
  if (name == "middle") return Position::middle;
  if (name == "final") return Position::final;
  if (name == "baseline") return Position::baseline;
  throw ConfigError("unknown position '" + name +
                    "' (expected first, middle, final or baseline)");
}

std::string PlacementPlan::id() const {
  if (is_baseline()) return "baseline";
  return to_string(position) + "_" + std::to_string(ratio_percent);
}

std::vector<int> PlacementPlan::deactivated_indices() const {
  std::vector<int> out;
  for (const LayerSpec& s : config.layer_specs) {
    if (s.kind == LayerKind::deactivated) out.push_back(s.index);
  }
  return out;
}

int expanded_count(int n_layers, int ratio_percent) {
  if (ratio_percent <= 0 || ratio_percent > 100) {
    throw ContractError("expanded_count: ratio " + std::to_string(ratio_percent) +
                        "% outside (0, 100]");
  }
  if (n_layers <= 0) throw ContractError("expanded_count: layer count must be positive");
  return static_cast<int>(static_cast<std::int64_t>(ratio_percent) * n_layers / 100);
}

std::vector<int> place(int n_layers, int n, Position position) {
  if (n <= 0 || n > n_layers) {
    throw ContractError("place: need 0 < n <= L, got n=" + std::to_string(n) +
                        " L=" + std::to_string(n_layers));
  }
  int start = 1;
  switch (position) {
    case Position::first:
      start = 1;
      break;
    case Position::final:
      start = n_layers - n + 1;
      break;
    case Position::middle:
      start = (n_layers - n + 1) / 2 + 1;
      break;
    case Position::baseline:
      if (n != n_layers) throw ContractError("place: the baseline expands no layers");
      start = 1;
      break;
  }
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = start + i;
  return out;
}

std::string to_string(ParityRounding r) { return r == ParityRounding::ceil ? "ceil" : "nearest"; }

ParityRounding parity_rounding_from_string(const std::string& name) {
  if (name == "ceil") return ParityRounding::ceil;
  if (name == "nearest") return ParityRounding::nearest;
  throw ConfigError("unknown parity rounding '" + name + "' (expected ceil or nearest)");
}

std::int64_t solve_parity_dim(const ModelConfig& base, int n, ParityRounding rounding) {
  if (n < 1 || n > base.n_layers) {
    throw ContractError("solve_parity_dim: expanded count " + std::to_string(n) +
                        " outside [1, " + std::to_string(base.n_layers) + "]");
  }
  const std::int64_t d = base.hidden_dim;
  const std::int64_t layers = base.n_layers;
  // The L - n deactivated layers give up their pre-FFN norm gain as well.
  const std::int64_t budget = layers * 3 * d * base.base_ffn_dim + (layers - n) * d;
  const std::int64_t per_unit = 3 * d * n;
  if (rounding == ParityRounding::ceil) return (budget + per_unit - 1) / per_unit;
  const std::int64_t q = budget / per_unit, r = budget % per_unit;
  const std::int64_t x = 2 * r >= per_unit ? q + 1 : q;
  return n < base.n_layers ? std::max(x, base.base_ffn_dim + 1) : x;
}

PlacementPlan build_plan(const PlacementConfig& cfg) {
  const ModelConfig& base = cfg.base;
  base.validate();
  for (const LayerSpec& s : base.layer_specs) {
    if (s.kind != LayerKind::standard || s.ffn_dim != base.base_ffn_dim) {
      throw ConfigError("build_plan: base architecture must be all-standard");
    }
  }
  PlacementPlan plan;
  plan.position = cfg.position;
  plan.ratio_percent = cfg.ratio_percent;
  plan.baseline_params = count_params(base, false);

  const int n = cfg.position == Position::baseline
                    ? base.n_layers
                    : expanded_count(base.n_layers, cfg.ratio_percent);
  if (n == 0) {
    throw ConfigError("build_plan: ratio " + std::to_string(cfg.ratio_percent) +
                      "% of " + std::to_string(base.n_layers) +
                      " layers leaves no expanded layer");
  }
  if (n == base.n_layers) {
    // Identical to the baseline architecture whatever the position label.
    plan.position = Position::baseline;
    plan.ratio_percent = 100;
    plan.config = base;
    plan.d_f_expanded = base.base_ffn_dim;
    for (int i = 1; i <= base.n_layers; ++i) plan.expanded_indices.push_back(i);
    plan.plan_params = plan.baseline_params;
    plan.param_delta = 0;
    return plan;
  }

  plan.expanded_indices = place(base.n_layers, n, cfg.position);
  plan.rounding = cfg.rounding;
  plan.d_f_expanded = solve_parity_dim(base, n, cfg.rounding);
  plan.config = base;
  for (LayerSpec& s : plan.config.layer_specs) {
    s.kind = LayerKind::deactivated;
    s.ffn_dim = 0;
  }
  for (int idx : plan.expanded_indices) {
    LayerSpec& s = plan.config.layer_specs[static_cast<std::size_t>(idx - 1)];
    s.kind = LayerKind::expanded;
    s.ffn_dim = plan.d_f_expanded;
  }
  plan.config.validate();
  plan.plan_params = count_params(plan.config, false);
  plan.param_delta = plan.plan_params - plan.baseline_params;
  return plan;
}

std::vector<PlacementPlan> build_all_plans(const ModelConfig& base, ParityRounding rounding) {
  std::vector<PlacementPlan> plans;
  plans.push_back(build_plan({Position::baseline, 100, base, rounding}));
  for (Position p : kPositions) {
    for (int r : kRatios) {
      // Ratios that round down to zero expanded layers have no architecture.
      if (r == 100 || expanded_count(base.n_layers, r) == 0) continue;
      plans.push_back(build_plan({p, r, base, rounding}));
    }
  }
  return plans;
}

nlohmann::json plan_to_json(const PlacementPlan& plan) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& s : plan.config.layer_specs) layers.push_back(s);
  return {{"id", plan.id()},
          {"position", to_string(plan.position)},
          {"ratio_percent", plan.ratio_percent},
          {"expanded_indices", plan.expanded_indices},
          {"deactivated_indices", plan.deactivated_indices()},
          {"d_f_expanded", plan.d_f_expanded},
          {"parity_rounding", to_string(plan.rounding)},
          {"baseline_params", plan.baseline_params},
          {"plan_params", plan.plan_params},
          {"param_delta", plan.param_delta},
          {"plan_params_with_embeddings", count_params(plan.config, true)},
          {"layers", layers},
          {"model", plan.config}};
}

PlacementPlan plan_from_json(const nlohmann::json& j) {
  try {
    PlacementPlan plan;
    plan.position = position_from_string(j.at("position").get<std::string>());
    plan.ratio_percent = j.at("ratio_percent").get<int>();
    plan.expanded_indices = j.at("expanded_indices").get<std::vector<int>>();
    plan.d_f_expanded = j.at("d_f_expanded").get<std::int64_t>();
    plan.rounding = parity_rounding_from_string(j.value("parity_rounding", std::string("ceil")));
    plan.config = j.at("model").get<ModelConfig>();
    plan.baseline_params = j.at("baseline_params").get<std::int64_t>();
    plan.plan_params = j.at("plan_params").get<std::int64_t>();
    plan.param_delta = j.at("param_delta").get<std::int64_t>();
    plan.config.validate();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("placement plan: ") + e.what());
  }
}

std::string format_plan_table(const PlacementPlan& plan) {
  std::ostringstream os;
  os << "plan " << plan.id() << "  (L=" << plan.config.n_layers
     << ", d=" << plan.config.hidden_dim << ", d_f=" << plan.config.base_ffn_dim
     << ", d'_f=" << plan.d_f_expanded << ")\n";
  os << "  layer  kind         ffn_dim\n";
  for (const LayerSpec& s : plan.config.layer_specs) {
    std::string kind = ffnlab::to_string(s.kind);
    kind.resize(12, ' ');
    std::string idx = std::to_string(s.index);
    os << "  " << std::string(5 - std::min<std::size_t>(5, idx.size()), ' ') << idx
       << "  " << kind << ' ' << s.ffn_dim << '\n';
  }
  const double rel = plan.baseline_params == 0
                         ? 0.0
                         : static_cast<double>(plan.param_delta) /
                               static_cast<double>(plan.baseline_params);
  os << "  non-embedding params: baseline " << plan.baseline_params << ", plan "
     << plan.plan_params << ", delta " << plan.param_delta << " (" << rel * 100.0
     << "%)\n";
  return os.str();
}

}  // namespace ffnlab::placement
