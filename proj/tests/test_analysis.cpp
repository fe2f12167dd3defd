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

#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ffnlab/analysis.hpp"
#include "ffnlab/errors.hpp"
#include "ffnlab/presets.hpp"
#include "support.hpp"

using namespace ffnlab;
using namespace ffnlab::analysis;
using namespace ffnlab::testing;
using placement::Position;

namespace {

eval::TaskResult acc(const std::string& name, double v, double chance = 0.25) {
  eval::TaskResult r;
  r.name = name;
  r.kind = eval::TaskKind::multiple_choice;
  r.metric = "acc";
  r.value = v;
  r.count = 10;
  r.chance = chance;
  r.below_chance = v < chance;
  return r;
}

eval::TaskResult ppl(const std::string& name, double v) {
  eval::TaskResult r;
  r.name = name;
  r.metric = "ppl";
  r.value = v;
  r.count = 10;
  return r;
}

eval::EvalReport report(const std::string& id, std::vector<eval::TaskResult> tasks) {
  eval::EvalReport r;
  r.model_id = id;
  r.tasks = std::move(tasks);
  return r;
}

RunReport run(Position p, int ratio, std::vector<eval::TaskResult> tasks) {
  ConfigRef c{placement::to_string(p) + "_" + std::to_string(ratio), p, ratio};
  return {c, report(c.id, std::move(tasks))};
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

// Unoptimized reading of the importance definition over explicit
// deactivated-layer sets.
struct BruteForce {
  std::vector<std::optional<double>> raw, standardized;
  double mu = 0, sigma = 0;
};

BruteForce brute_force(const std::vector<std::pair<double, std::set<int>>>& configs, int n_layers) {
  BruteForce b;
  std::vector<double> scored;
  for (int l = 1; l <= n_layers; ++l) {
    double total = 0;
    int c = 0;
    for (const auto& [ri, deactivated] : configs) {
      if (deactivated.count(l)) {
        total += -ri / static_cast<double>(deactivated.size());
        ++c;
      }
    }
    if (c == 0) {
      b.raw.emplace_back();
      continue;
    }
    b.raw.emplace_back(total / c);
    scored.push_back(total / c);
  }
  for (double r : scored) b.mu += r;
  b.mu /= static_cast<double>(scored.size());
  for (double r : scored) b.sigma += (r - b.mu) * (r - b.mu);
  b.sigma = std::sqrt(b.sigma / static_cast<double>(scored.size()));
  for (const auto& r : b.raw) {
    if (r) b.standardized.emplace_back((*r - b.mu) / b.sigma);
    else b.standardized.emplace_back();
  }
  return b;
}

}  // namespace

TEST_CASE("relative improvement hand cases") {
  CHECK(std::abs(relative_improvement(0.33, 0.30, MetricKind::accuracy) - 10.0) <= 1e-12);
  CHECK(std::abs(relative_improvement(90, 100, MetricKind::loss) - 10.0) <= 1e-12);
  CHECK(relative_improvement(0.4, 0.4, MetricKind::accuracy) == 0.0);
  CHECK(relative_improvement(17.5, 17.5, MetricKind::loss) == 0.0);
  CHECK(relative_improvement(0.27, 0.30, MetricKind::accuracy) < 0);
  CHECK_THROWS_AS(relative_improvement(1.0, 0.0, MetricKind::accuracy), ContractError);
  CHECK(metric_kind_of("acc") == MetricKind::accuracy);
  CHECK(metric_kind_of("ppl") == MetricKind::loss);
  CHECK(metric_kind_of("loss") == MetricKind::loss);
  CHECK_THROWS_AS(metric_kind_of("bleu"), ConfigError);
}

TEST_CASE("relative improvement is monotone in the right direction") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.01, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double base = u(rng);
    double a = u(rng), b = u(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    CHECK(relative_improvement(b, base, MetricKind::accuracy) > relative_improvement(a, base, MetricKind::accuracy));
    CHECK(relative_improvement(a, base, MetricKind::loss) > relative_improvement(b, base, MetricKind::loss));
  }
}

TEST_CASE("RI table and averages") {
  auto base = report("baseline", {acc("t1", 0.5), ppl("t2", 20.0), acc("t3", 0.4)});
  std::vector<RunReport> runs{
      run(Position::middle, 30, {acc("t1", 0.505), ppl("t2", 19.6), acc("t3", 0.424)}),
      run(Position::first, 70, {acc("t1", 0.49), ppl("t2", 20.4), acc("t3", 0.4)}),
      run(Position::first, 30, {acc("t1", 0.45), ppl("t2", 21.0), acc("t3", 0.38)}),
  };
  auto table = build_ri_table(base, runs);
  std::vector<std::string> ids;
  for (const auto& c : table.configs) ids.push_back(c.id);
  CHECK(ids == std::vector<std::string>{"first_30", "first_70", "first_100", "middle_30", "middle_100"});
  CHECK(table.rows.size() == 5 * 3);
  for (const auto& t : table.tasks) {
    CHECK(table.find("first_100", t)->ri == 0.0);
    CHECK(table.find("middle_100", t)->value == table.baseline.at(t).value);
  }
  // middle_30: +1, +2, +6.
  CHECK(table.find("middle_30", "t1")->ri == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(table.find("middle_30", "t2")->ri == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(table.find("middle_30", "t3")->ri == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(table.find("middle_30", "t4") == nullptr);

  auto avg = average_ri(table);
  CHECK(avg.tasks.size() == 3);
  CHECK(*avg.find("middle_30") == doctest::Approx(3.0).epsilon(1e-12));
  // first_70: -2, -2, 0.
  CHECK(*avg.find("first_70") == doctest::Approx(-4.0 / 3.0).epsilon(1e-12));
  CHECK(*avg.find("first_100") == 0.0);

  AverageOptions one;
  one.include = {"t2"};
  auto single = average_ri(table, one);
  CHECK(*single.find("first_30") == table.find("first_30", "t2")->ri);

  AverageOptions pair;
  pair.exclude = {"t3", "t2"};
  CHECK(average_ri(table, pair).tasks == std::vector<std::string>{"t1"});

  SUBCASE("symmetric pair averages to zero") {
    auto b2 = report("baseline", {acc("x", 0.5), acc("y", 0.5)});
    auto t2 = build_ri_table(b2, {run(Position::final, 50, {acc("x", 0.51), acc("y", 0.49)})});
    CHECK(std::abs(*average_ri(t2).find("final_50")) <= 1e-12);
  }
  SUBCASE("missing cells are listed") {
    auto partial = runs;
    partial[0].report.tasks.pop_back();
    partial[1].report.tasks.erase(partial[1].report.tasks.begin());
    auto t = build_ri_table(base, partial);
    try {
      average_ri(t);
      FAIL("expected a missing-cell error");
    } catch (const ContractError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("(middle_30, t3)") != std::string::npos);
      CHECK(msg.find("(first_70, t1)") != std::string::npos);
    }
  }
  SUBCASE("below-chance tasks are excluded") {
    auto r2 = runs;
    r2[2].report.tasks[2] = acc("t3", 0.2);
    auto t = build_ri_table(base, r2);
    CHECK(t.find("first_30", "t3")->below_chance);
    auto a = average_ri(t);
    CHECK(a.tasks == std::vector<std::string>{"t1", "t2"});
    CHECK(a.excluded.count("t3") == 1);
    AverageOptions keep;
    keep.exclude_below_chance = false;
    CHECK(average_ri(t, keep).tasks.size() == 3);
    AverageOptions none;
    none.include = {"t3"};
    CHECK_THROWS_AS(average_ri(t, none), ContractError);
  }
  SUBCASE("bad inputs") {
    auto dup = runs;
    dup.push_back(runs[0]);
    CHECK_THROWS_AS(build_ri_table(base, dup), ConfigError);
    auto wrong = runs;
    wrong[0].report.tasks[1] = acc("t2", 0.5);
    CHECK_THROWS_AS(build_ri_table(base, wrong), ConfigError);
    AverageOptions unknown;
    unknown.include = {"nope"};
    CHECK_THROWS_AS(average_ri(table, unknown), ConfigError);
  }
}

TEST_CASE("layer importance matches a brute-force evaluation") {
  const auto base = make_baseline_config(4, 16, 2, 32, 259, 32);
  // first_50 deactivates {3,4}, middle_50 {1,4}, final_30 {1,2,3}.
  std::vector<placement::PlacementPlan> plans{
      placement::build_plan({Position::first, 50, base}),
      placement::build_plan({Position::middle, 50, base}),
      placement::build_plan({Position::final, 30, base}),
  };
  CHECK(plans[1].deactivated_indices() == std::vector<int>{1, 4});
  const std::map<std::string, double> avg{{"first_50", -1.7}, {"middle_50", 0.6}, {"final_30", -3.3}};
  const auto b = brute_force({{-1.7, {3, 4}}, {0.6, {1, 4}}, {-3.3, {1, 2, 3}}}, 4);

  auto iv = layer_importance(avg, plans, 4);
  REQUIRE(iv.layers.size() == 4);
  CHECK(iv.mu == b.mu);
  CHECK(iv.sigma == b.sigma);
  CHECK_FALSE(iv.degenerate);
  for (int l = 0; l < 4; ++l) {
    CHECK(iv.layers[l].layer == l + 1);
    REQUIRE(iv.layers[l].raw.has_value());
    CHECK(*iv.layers[l].raw == *b.raw[l]);
    CHECK(*iv.layers[l].standardized == *b.standardized[l]);
  }
  CHECK(iv.layers[0].count == 2);
  CHECK(iv.layers[1].count == 1);
  CHECK(iv.layers[3].count == 2);

  // Each configuration distributes exactly -avg over its layers.
  for (const auto& p : plans) {
    const auto d = p.deactivated_indices();
    double dist = 0;
    for (std::size_t i = 0; i < d.size(); ++i) dist += -avg.at(p.id()) / static_cast<double>(d.size());
    CHECK(dist == doctest::Approx(-avg.at(p.id())).epsilon(1e-15));
  }

  const auto z = iv.standardized_values();
  double m = 0, v = 0;
  for (double x : z) m += x;
  m /= static_cast<double>(z.size());
  for (double x : z) v += (x - m) * (x - m);
  v /= static_cast<double>(z.size());
  CHECK(std::abs(m) <= 1e-9);
  CHECK(std::abs(v - 1.0) <= 1e-9);

  SUBCASE("random configuration sets up to six layers") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 200; ++trial) {
      const int L = 2 + static_cast<int>(rng() % 5);
      auto cfg = make_baseline_config(L, 16, 2, 32, 259, 32);
      std::vector<placement::PlacementPlan> ps;
      std::map<std::string, double> a;
      std::vector<std::pair<double, std::set<int>>> sets;
      for (auto pos : placement::kPositions) {
        for (int r : {10, 30, 50, 70, 90}) {
          if (placement::expanded_count(L, r) == 0 || rng() % 3 == 0) continue;
          auto p = placement::build_plan({pos, r, cfg});
          const double ri = std::uniform_real_distribution<double>(-5, 5)(rng);
          ps.push_back(p);
          a[p.id()] = ri;
          const auto ex = placement::place(L, placement::expanded_count(L, r), pos);
          std::set<int> d;
          for (int l = 1; l <= L; ++l)
            if (std::find(ex.begin(), ex.end(), l) == ex.end()) d.insert(l);
          sets.emplace_back(ri, d);
        }
      }
      if (ps.empty()) continue;
      const auto got = layer_importance(a, ps, L);
      const auto want = brute_force(sets, L);
      for (int l = 0; l < L; ++l) {
        CHECK(got.layers[l].raw.has_value() == want.raw[l].has_value());
        if (!want.raw[l]) continue;
        CHECK(*got.layers[l].raw == *want.raw[l]);
        if (!got.degenerate) CHECK(*got.layers[l].standardized == *want.standardized[l]);
      }
    }
  }
}

TEST_CASE("worked contribution on the 40-layer preset") {
  const auto base = presets::model_preset("570m-40l").config;
  auto plan = placement::build_plan({Position::final, 50, base});
  const auto d = plan.deactivated_indices();
  REQUIRE(d.size() == 20);
  CHECK(d.front() == 1);
  CHECK(d.back() == 20);
  auto iv = layer_importance({{"final_50", -2.04}}, std::vector{plan}, 40);
  CHECK(std::round(*iv.layers[1].raw * 1000) / 1000 == 0.102);
  CHECK(*iv.layers[1].raw == doctest::Approx(0.102).epsilon(1e-12));
  CHECK(iv.layers[1].count == 1);
  CHECK_FALSE(iv.layers[20].raw.has_value());
  // A single contribution value leaves no spread to standardize.
  CHECK(iv.degenerate);
  CHECK(*iv.layers[1].standardized == 0.0);
}

TEST_CASE("importance edge cases") {
  const auto base = make_baseline_config(4, 16, 2, 32, 259, 32);
  std::vector<placement::PlacementPlan> plans{
      placement::build_plan({Position::first, 50, base}),
      placement::build_plan({Position::final, 50, base}),
  };
  auto zero = layer_importance({{"first_50", 0.0}, {"final_50", 0.0}}, plans, 4);
  for (const auto& l : zero.layers) CHECK(*l.raw == 0.0);
  CHECK(zero.degenerate);

  auto partial = layer_importance({{"first_50", 1.0}}, plans, 4);
  REQUIRE(partial.warnings.size() >= 1);
  CHECK(partial.warnings[0].find("final_50") != std::string::npos);
  CHECK_FALSE(partial.layers[0].raw.has_value());

  CHECK_THROWS_AS(layer_importance({}, plans, 6), DimensionError);
  auto empty = layer_importance({}, {placement::build_plan({Position::baseline, 100, base})}, 4);
  CHECK(empty.standardized_values().empty());
}

TEST_CASE("emitted report") {
  auto base = report("baseline", {acc("t1", 0.5), ppl("t2", 20.0)});
  std::vector<RunReport> runs{
      run(Position::first, 50, {acc("t1", 0.4567891234), ppl("t2", 21.123456789)}),
      run(Position::final, 50, {acc("t1", 0.51), ppl("t2", 19.0)}),
  };
  auto table = build_ri_table(base, runs);
  auto avg = average_ri(table);
  const auto cfg = make_baseline_config(12, 16, 2, 32, 259, 32);
  std::vector<placement::PlacementPlan> plans;
  std::map<std::string, double> ris;
  for (auto pos : placement::kPositions) {
    for (int r : {30, 70}) {
      plans.push_back(placement::build_plan({pos, r, cfg}));
      ris[plans.back().id()] = static_cast<double>(r) / 10.0 - static_cast<double>(plans.size());
    }
  }
  auto iv = layer_importance(ris, plans, 12);
  auto dir = scratch_dir("report");
  auto notices = emit_report(dir, table, avg, iv);

  auto rows = read_csv(dir / "report.csv");
  REQUIRE(rows.size() == table.rows.size() + 1);
  CHECK(rows[0] == std::vector<std::string>{"config", "position", "ratio", "task", "metric", "kind",
                                            "value", "baseline", "ri", "below_chance"});
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    CHECK(rows[i + 1][0] == r.config_id);
    CHECK(rows[i + 1][3] == r.task);
    CHECK(std::stod(rows[i + 1][6]) == r.value);
    CHECK(std::stod(rows[i + 1][7]) == r.baseline_value);
    CHECK(std::stod(rows[i + 1][8]) == r.ri);
  }
  auto avg_rows = read_csv(dir / "avg_ri.csv");
  REQUIRE(avg_rows.size() == avg.mean.size() + 1);
  for (std::size_t i = 0; i < avg.mean.size(); ++i) CHECK(std::stod(avg_rows[i + 1][3]) == avg.mean[i].second);
  auto imp_rows = read_csv(dir / "importance.csv");
  REQUIRE(imp_rows.size() == 13);
  for (int l = 0; l < 12; ++l) {
    CHECK(std::stoi(imp_rows[l + 1][0]) == l + 1);
    CHECK(std::stod(imp_rows[l + 1][2]) == *iv.layers[l].raw);
    CHECK(std::stod(imp_rows[l + 1][3]) == *iv.layers[l].standardized);
  }

  std::ifstream sf(dir / "summary.json");
  auto summary = nlohmann::json::parse(sf);
  CHECK(summary["configs"].size() == avg.mean.size());
  CHECK(summary["importance"]["layers"].size() == 12);

  CHECK(std::filesystem::exists(dir / "plots" / "ri_t1.svg"));
  CHECK(std::filesystem::exists(dir / "plots" / "ri_t2.svg"));
  std::ifstream in(dir / "plots" / "importance.svg");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string svg = ss.str();
  std::regex bar(R"re(<rect class="bar" data-layer="(\d+)" x="([0-9.]+)" y="[0-9.]+" width="([0-9.]+)")re");
  std::map<int, std::pair<double, double>> bars;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), bar); it != std::sregex_iterator(); ++it)
    bars[std::stoi((*it)[1])] = {std::stod((*it)[2]), std::stod((*it)[3])};
  CHECK(bars.size() == 12);
  std::smatch mid;
  REQUIRE(std::regex_search(svg, mid, std::regex(R"re(<line class="midpoint" x1="([0-9.]+)")re")));
  const double mx = std::stod(mid[1]);
  CHECK(mx > bars[6].first + bars[6].second);
  CHECK(mx < bars[7].first);

  SUBCASE("no importance vector") {
    auto d2 = scratch_dir("report_noimp");
    auto n2 = emit_report(d2, table, avg, std::nullopt);
    CHECK_FALSE(std::filesystem::exists(d2 / "plots" / "importance.svg"));
    CHECK(std::filesystem::exists(d2 / "report.csv"));
    bool noted = false;
    for (const auto& n : n2) noted |= n.find("importance") != std::string::npos;
    CHECK(noted);
  }
}
