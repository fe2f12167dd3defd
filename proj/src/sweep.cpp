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

#include "ffnlab/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "ffnlab/checkpoint.hpp"
#include "ffnlab/corpus.hpp"
#include "ffnlab/errors.hpp"
#include "ffnlab/evaluation.hpp"
#include "ffnlab/presets.hpp"

namespace ffnlab::sweep {

namespace fs = std::filesystem;

ModelConfig ExperimentSpec::base_model() const {
  if (model) return *model;
  if (preset.empty()) throw ConfigError("experiment spec needs a preset or a model");
  return presets::model_preset(preset).config;
}

void ExperimentSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("experiment spec: " + what); };
  if (!preset.empty() && model) fail("give either preset or model, not both");
  base_model().validate();
  train.validate();
  if (positions.empty()) fail("no positions");
  std::set<placement::Position> seen_pos;
  for (auto p : positions) {
    if (p == placement::Position::baseline) fail("'baseline' is not a placement position");
    if (!seen_pos.insert(p).second) fail("position " + placement::to_string(p) + " listed twice");
  }
  std::set<int> seen;
  for (int r : ratios) {
    if (r <= 0 || r > 100) fail("ratio " + std::to_string(r) + " outside (0, 100]");
    if (!seen.insert(r).second) fail("ratio " + std::to_string(r) + " listed twice");
  }
  if (corpus.empty()) fail("no corpus");
  if (tasks.empty()) fail("no tasks");
  if (output_root.empty()) fail("no output_root (set it or FFNLAB_OUTPUT_ROOT)");
  if (jobs < 1) fail("jobs must be at least 1");
  if (tokenizer.kind != "byte" && tokenizer.kind != "bpe" && tokenizer.kind != "file") {
    fail("tokenizer kind must be byte, bpe or file");
  }
}

namespace {

nlohmann::json spec_identity(const ExperimentSpec& s) {
  nlohmann::json j;
  if (s.model) {
    j["model"] = *s.model;
  } else {
    j["preset"] = s.preset;
  }
  std::vector<std::string> pos;
  for (auto p : s.positions) pos.push_back(placement::to_string(p));
  j["positions"] = pos;
  j["ratios"] = s.ratios;
  j["parity_rounding"] = placement::to_string(s.parity_rounding);
  j["train"] = s.train;
  j["corpus"] = s.corpus.string();
  std::vector<std::string> tasks;
  for (const auto& t : s.tasks) tasks.push_back(t.string());
  j["tasks"] = tasks;
  j["seed"] = s.seed;
  j["tokenizer"] = {{"kind", s.tokenizer.kind},
                    {"vocab_size", s.tokenizer.vocab_size},
                    {"path", s.tokenizer.path.string()}};
  j["average"] = {{"include", s.average.include},
                  {"exclude", s.average.exclude},
                  {"exclude_below_chance", s.average.exclude_below_chance}};
  return j;
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  j = spec_identity(s);
  j["output_root"] = s.output_root.string();
  j["jobs"] = s.jobs;
}

ExperimentSpec spec_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  ExperimentSpec s;
  try {
    s.preset = j.value("preset", std::string());
    if (j.contains("model")) s.model = j["model"].get<ModelConfig>();
    if (j.contains("positions")) {
      s.positions.clear();
      for (const auto& p : j["positions"]) s.positions.push_back(placement::position_from_string(p));
    }
    if (j.contains("ratios")) s.ratios = j["ratios"].get<std::vector<int>>();
    if (j.contains("parity_rounding")) {
      s.parity_rounding = placement::parity_rounding_from_string(j["parity_rounding"].get<std::string>());
    }
    if (j.contains("train_preset")) {
      s.train = presets::train_preset(j["train_preset"].get<std::string>()).config;
    }
    if (j.contains("train")) {
      train::TrainConfig t = s.train;
      from_json(j["train"], t);
      s.train = t;
    }
    s.corpus = resolve(j.value("corpus", std::string()), base_dir);
    if (j.contains("tasks")) {
      if (j["tasks"].is_string()) {
        s.tasks.push_back(resolve(j["tasks"].get<std::string>(), base_dir));
      } else {
        for (const auto& t : j["tasks"]) s.tasks.push_back(resolve(t.get<std::string>(), base_dir));
      }
    }
    s.output_root = resolve(j.value("output_root", std::string()), base_dir);
    s.seed = j.value("seed", std::uint64_t{0});
    s.train.seed = s.seed;
    s.jobs = j.value("jobs", 1);
    if (j.contains("tokenizer")) {
      const auto& t = j["tokenizer"];
      if (t.is_string()) {
        s.tokenizer.kind = t.get<std::string>();
      } else {
        s.tokenizer.kind = t.value("kind", std::string("byte"));
        s.tokenizer.vocab_size = t.value("vocab_size", std::size_t{0});
        s.tokenizer.path = resolve(t.value("path", std::string()), base_dir);
      }
    }
    if (j.contains("average")) {
      const auto& a = j["average"];
      s.average.include = a.value("include", std::vector<std::string>{});
      s.average.exclude = a.value("exclude", std::vector<std::string>{});
      s.average.exclude_below_chance = a.value("exclude_below_chance", true);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment spec: ") + e.what());
  }
  return s;
}

ExperimentSpec load_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read experiment spec " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return spec_from_json(j, fs::absolute(path).parent_path());
}

void apply_environment(ExperimentSpec& spec) {
  if (const char* root = std::getenv("FFNLAB_OUTPUT_ROOT"); root && *root && spec.output_root.empty()) {
    spec.output_root = root;
  }
  if (const char* threads = std::getenv("FFNLAB_THREADS"); threads && *threads) {
    try {
      spec.jobs = std::stoi(threads);
    } catch (const std::exception&) {
      throw ConfigError(std::string("FFNLAB_THREADS='") + threads + "' is not an integer");
    }
  }
}

std::vector<placement::PlacementPlan> sweep_plans(const ExperimentSpec& spec) {
  const ModelConfig base = spec.base_model();
  std::vector<placement::PlacementPlan> plans;
  plans.push_back(placement::build_plan({placement::Position::baseline, 100, base}));
  std::vector<int> ratios = spec.ratios;
  std::sort(ratios.begin(), ratios.end());
  for (auto pos : placement::kPositions) {
    if (std::find(spec.positions.begin(), spec.positions.end(), pos) == spec.positions.end()) continue;
    for (int r : ratios) {
      if (r == 100) continue;
      if (placement::expanded_count(base.n_layers, r) == 0) continue;
      plans.push_back(placement::build_plan({pos, r, base, spec.parity_rounding}));
    }
  }
  return plans;
}

data::Tokenizer build_tokenizer(const TokenizerSpec& spec, const std::vector<std::string>& documents) {
  if (spec.kind == "byte") return data::Tokenizer::byte_level();
  if (spec.kind == "file") return data::Tokenizer::load(spec.path);
  if (spec.kind == "bpe") return data::Tokenizer::train_bpe(documents, spec.vocab_size);
  throw ConfigError("unknown tokenizer kind " + spec.kind);
}

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

class Manifest {
 public:
  Manifest(fs::path path, nlohmann::json identity, const std::vector<placement::PlacementPlan>& plans)
      : path_(std::move(path)), identity_(std::move(identity)) {
    const std::string hash = spec_hash();
    std::map<std::string, RunStatus> previous;
    if (fs::exists(path_)) {
      std::ifstream in(path_);
      nlohmann::json old;
      try {
        old = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("unreadable manifest " + path_.string() + ": " + e.what());
      }
      if (old.value("spec_hash", "") != hash) {
        throw ConfigError("output root already holds a different sweep (manifest " +
                          path_.string() + "); choose a new output_root");
      }
      for (const auto& r : old.at("runs")) {
        previous[r.at("id")] = {r.at("id"), r.at("status"), r.value("error", ""),
                                r.value("final_step", std::int64_t{0})};
      }
    }
    for (const auto& p : plans) {
      auto it = previous.find(p.id());
      runs_.push_back(it != previous.end() ? it->second : RunStatus{p.id(), "pending", "", 0});
    }
    save_locked();
  }

  RunStatus get(const std::string& id) {
    std::lock_guard lock(mu_);
    for (const auto& r : runs_) {
      if (r.id == id) return r;
    }
    throw ContractError("manifest has no run " + id);
  }

  void set(const RunStatus& s) {
    std::lock_guard lock(mu_);
    for (auto& r : runs_) {
      if (r.id == s.id) r = s;
    }
    save_locked();
  }

  std::vector<RunStatus> runs() {
    std::lock_guard lock(mu_);
    return runs_;
  }

 private:
  std::string spec_hash() const {
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", io::crc32(identity_.dump()));
    return buf;
  }

  void save_locked() {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : runs_) {
      nlohmann::json e = {{"id", r.id}, {"status", r.status}, {"final_step", r.final_step}};
      if (!r.error.empty()) e["error"] = r.error;
      runs.push_back(e);
    }
    write_json(path_, {{"spec", identity_}, {"spec_hash", spec_hash()}, {"runs", runs}});
  }

  fs::path path_;
  nlohmann::json identity_;
  std::mutex mu_;
  std::vector<RunStatus> runs_;
};

}  // namespace

SweepResult run_sweep(const ExperimentSpec& spec, const SweepOptions& options) {
  spec.validate();
  std::mutex log_mu;
  auto log = [&](const std::string& msg) {
    if (!options.log) return;
    std::lock_guard lock(log_mu);
    options.log(msg);
  };

  const data::Corpus corpus = data::load_corpus(spec.corpus);
  const data::Tokenizer tok = build_tokenizer(spec.tokenizer, corpus.documents);
  const auto documents = data::tokenize(corpus, tok);
  std::vector<eval::EvalTask> tasks;
  for (const auto& t : spec.tasks) {
    auto loaded = eval::load_tasks(t);
    tasks.insert(tasks.end(), loaded.begin(), loaded.end());
  }

  const auto plans = sweep_plans(spec);
  const fs::path root = spec.output_root;
  for (const char* sub : {"plans", "runs", "reports", "analysis"}) fs::create_directories(root / sub);
  for (const auto& p : plans) write_json(root / "plans" / (p.id() + ".json"), placement::plan_to_json(p));
  Manifest manifest(root / "manifest.json", spec_identity(spec), plans);

  SweepResult result;
  for (int r : spec.ratios) {
    if (r == 100) result.notices.push_back("ratio 100 is the baseline architecture; reusing the baseline run");
    else if (placement::expanded_count(spec.base_model().n_layers, r) == 0) {
      result.notices.push_back("ratio " + std::to_string(r) + " expands no layer at this depth; skipped");
    }
  }

  train::TrainConfig tcfg = spec.train;
  tcfg.seed = spec.seed;

  auto run_one = [&](const placement::PlacementPlan& plan) {
    const std::string id = plan.id();
    const fs::path report_path = root / "reports" / (id + ".json");
    RunStatus status = manifest.get(id);
    if (status.status == "completed" && fs::exists(report_path)) {
      log("[" + id + "] already completed; skipped");
      return;
    }
    try {
      log("[" + id + "] training " + std::to_string(tcfg.total_steps) + " steps");
      train::RunOptions ro;
      ro.out_dir = root / "runs" / id;
      ro.resume_latest = true;
      auto run = train::run_training(plan.config, tcfg, tok, documents, ro);
      const auto model = io::load_model<float>(io::read_container(run.checkpoint));
      eval::TransformerLM<float> lm(model);
      eval::EvalReport report = eval::evaluate(lm, tok, tasks);
      report.model_id = id;
      report.seed = spec.seed;
      report.checkpoint_step = run.final_step;
      eval::write_report(report_path, report);
      manifest.set({id, "completed", "", run.final_step});
      std::string line = "[" + id + "] done:";
      for (const auto& t : report.tasks) line += " " + t.name + "=" + train::format_number(t.value);
      log(line);
    } catch (const Error& e) {
      manifest.set({id, "failed", e.what(), 0});
      log("[" + id + "] failed: " + e.what());
    }
  };

  run_one(plans.front());
  if (manifest.get("baseline").status != "completed") {
    result.runs = manifest.runs();
    throw TrainingAborted("baseline run failed: " + manifest.get("baseline").error);
  }

  std::atomic<std::size_t> next{1};
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(spec.jobs),
                                                    std::max<std::size_t>(plans.size() - 1, 1));
  auto worker = [&] {
    for (std::size_t i = next++; i < plans.size(); i = next++) run_one(plans[i]);
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  result.runs = manifest.runs();

  analysis::AnalysisInputs inputs = analysis::load_inputs(root / "reports", root / "plans");
  result.analysis = analysis::analyze(inputs, spec.average, root / "analysis");
  for (const auto& n : result.analysis->notices) result.notices.push_back(n);
  return result;
}

}  // namespace ffnlab::sweep
