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

#include "ffnlab/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "ffnlab/analysis.hpp"
#include "ffnlab/checkpoint.hpp"
#include "ffnlab/corpus.hpp"
#include "ffnlab/errors.hpp"
#include "ffnlab/evaluation.hpp"
#include "ffnlab/placement.hpp"
#include "ffnlab/presets.hpp"
#include "ffnlab/sweep.hpp"
#include "ffnlab/synthetic.hpp"
#include "ffnlab/training.hpp"

namespace ffnlab::cli {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const nlohmann::json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

ModelConfig base_model(const std::string& preset, const std::string& model_file) {
  if (!model_file.empty()) {
    auto c = read_json_file(model_file).get<ModelConfig>();
    c.validate();
    return c;
  }
  if (preset.empty()) throw ConfigError("give --preset or --model; presets: " + presets::preset_names());
  return presets::model_preset(preset).config;
}

std::string parity_header() {
  return "id            expanded  d'_f      params(non-emb)  delta      delta%\n";
}

std::string parity_line(const placement::PlacementPlan& p) {
  char buf[160];
  const double pct = p.baseline_params ? 100.0 * static_cast<double>(p.param_delta) /
                                             static_cast<double>(p.baseline_params)
                                       : 0.0;
  std::snprintf(buf, sizeof(buf), "%-13s %-9zu %-9lld %-16lld %-10lld %+.4f\n", p.id().c_str(),
                p.expanded_indices.size(), static_cast<long long>(p.d_f_expanded),
                static_cast<long long>(p.plan_params), static_cast<long long>(p.param_delta), pct);
  return buf;
}

struct PlanArgs {
  std::string preset, model, position = "middle", out, rounding = "ceil";
  int ratio = 0;
  bool all = false, table = false;
};

int cmd_plan(const PlanArgs& a, std::ostream& out) {
  const ModelConfig base = base_model(a.preset, a.model);
  const auto rounding = placement::parity_rounding_from_string(a.rounding);
  std::vector<placement::PlacementPlan> plans;
  if (a.all) {
    plans = placement::build_all_plans(base, rounding);
  } else {
    if (a.ratio == 0) throw ConfigError("plan: give --ratio or --all");
    if (a.ratio == 100) {
      out << "note: ratio 100 is the baseline architecture; the baseline run is reused\n";
      plans.push_back(placement::build_plan({placement::Position::baseline, 100, base}));
    } else {
      plans.push_back(
          placement::build_plan({placement::position_from_string(a.position), a.ratio, base, rounding}));
    }
  }
  out << parity_header();
  for (const auto& p : plans) out << parity_line(p);
  if (a.table) {
    for (const auto& p : plans) out << '\n' << placement::format_plan_table(p);
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    for (const auto& p : plans) write_json_file(fs::path(a.out) / (p.id() + ".json"), placement::plan_to_json(p));
    out << "wrote " << plans.size() << " plan(s) to " << a.out << '\n';
  }
  return kExitOk;
}

struct TrainArgs {
  std::string preset, model, plan, position, train_config, train_preset = "desk";
  std::string corpus, tokenizer = "byte", out, resume;
  int ratio = 0;
  std::optional<std::int64_t> steps, warmup, stop_at, interval;
  std::optional<double> lr;
  std::optional<std::size_t> batch, seq;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheduler;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  ModelConfig model;
  if (!a.plan.empty()) {
    model = placement::plan_from_json(read_json_file(a.plan)).config;
  } else {
    const ModelConfig base = base_model(a.preset, a.model);
    if (a.ratio != 0 && a.ratio != 100) {
      model = placement::build_plan({placement::position_from_string(a.position.empty() ? "middle" : a.position),
                                     a.ratio, base})
                  .config;
    } else {
      model = base;
    }
  }
  train::TrainConfig cfg = presets::train_preset(a.train_preset).config;
  if (!a.train_config.empty()) from_json(read_json_file(a.train_config), cfg);
  if (a.steps) cfg.total_steps = *a.steps;
  if (a.warmup) cfg.warmup_steps = *a.warmup;
  if (a.lr) cfg.peak_lr = *a.lr;
  if (a.batch) cfg.batch_size = *a.batch;
  if (a.seq) cfg.seq_len = *a.seq;
  if (a.seed) cfg.seed = *a.seed;
  if (a.interval) cfg.checkpoint_interval = *a.interval;
  if (a.scheduler) cfg.scheduler = train::scheduler_from_string(*a.scheduler);
  cfg.validate();

  const data::Corpus corpus = data::load_corpus(a.corpus);
  sweep::TokenizerSpec ts;
  if (a.tokenizer == "byte") {
    ts.kind = "byte";
  } else {
    ts.kind = "file";
    ts.path = a.tokenizer;
  }
  const data::Tokenizer tok = sweep::build_tokenizer(ts, corpus.documents);
  const auto docs = data::tokenize(corpus, tok);

  train::RunOptions ro;
  ro.out_dir = a.out;
  ro.stop_at = a.stop_at;
  ro.resume_latest = false;
  if (!a.resume.empty()) ro.resume_from = fs::path(a.resume);
  const std::int64_t every = std::max<std::int64_t>(1, cfg.total_steps / 20);
  if (!a.quiet) {
    ro.on_step = [&](const train::StepRecord& r) {
      if (r.step % every == 0 || r.step == 1) {
        out << "step " << r.step << " lr " << train::format_number(r.lr) << " loss "
            << train::format_number(r.loss) << " grad_norm " << train::format_number(r.grad_norm)
            << '\n';
      }
    };
  }
  auto res = train::run_training(model, cfg, tok, docs, ro);
  out << "finished at step " << res.final_step << "; checkpoint " << res.checkpoint.string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, tasks, out = "report.json", model_id;
  bool raw = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const io::Container c = io::read_container(a.checkpoint);
  const data::Tokenizer tok = c.meta.contains("tokenizer")
                                  ? data::Tokenizer::from_json(c.meta["tokenizer"])
                                  : data::Tokenizer::byte_level();
  const auto tasks = eval::load_tasks(a.tasks);
  eval::EvalOptions opts;
  opts.normalize_choices = !a.raw;
  eval::EvalReport report;
  if (c.meta.value("precision", "f32") == "f64") {
    const auto m = io::load_model<double>(c);
    report = eval::evaluate(eval::TransformerLM<double>(m), tok, tasks, opts);
  } else {
    const auto m = io::load_model<float>(c);
    report = eval::evaluate(eval::TransformerLM<float>(m), tok, tasks, opts);
  }
  report.model_id = a.model_id.empty() ? c.meta.value("model_id", std::string("model")) : a.model_id;
  report.checkpoint_step = c.meta.value("step", std::int64_t{0});
  if (c.meta.contains("train_config")) {
    report.seed = c.meta["train_config"].value("seed", std::uint64_t{0});
  }
  eval::write_report(a.out, report);
  for (const auto& t : report.tasks) {
    out << t.name << " (" << eval::to_string(t.kind) << ") " << t.metric << " = "
        << train::format_number(t.value) << " over " << t.count << " items";
    if (t.metric == "acc" && t.kind == eval::TaskKind::multiple_choice) {
      out << ", chance " << train::format_number(t.chance) << (t.below_chance ? " (below chance)" : "");
    }
    out << '\n';
  }
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

struct AnalyzeArgs {
  std::string reports, plans, out = "analysis";
  std::vector<std::string> include, exclude;
  bool keep_below_chance = false;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const auto inputs = analysis::load_inputs(a.reports, a.plans);
  analysis::AverageOptions opts;
  opts.include = a.include;
  opts.exclude = a.exclude;
  opts.exclude_below_chance = !a.keep_below_chance;
  const auto res = analysis::analyze(inputs, opts, a.out);
  for (const auto& n : res.notices) out << "note: " << n << '\n';
  for (const auto& [cfg, v] : res.average.mean) {
    out << std::left << std::setw(12) << cfg.id << " avg RI " << train::format_number(v) << '\n';
  }
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

struct SweepArgs {
  std::string spec, output_root;
  int jobs = 0;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  sweep::ExperimentSpec spec = sweep::load_spec(a.spec);
  if (!a.output_root.empty()) spec.output_root = a.output_root;
  sweep::apply_environment(spec);
  if (a.jobs > 0) spec.jobs = a.jobs;
  sweep::SweepOptions opts;
  opts.log = [&](const std::string& s) { out << s << '\n' << std::flush; };
  const auto res = sweep::run_sweep(spec, opts);
  int failed = 0;
  for (const auto& r : res.runs) failed += r.status == "failed";
  for (const auto& n : res.notices) out << "note: " << n << '\n';
  out << res.runs.size() << " run(s), " << failed << " failed; outputs in " << spec.output_root.string() << '\n';
  return failed ? kExitRuntime : kExitOk;
}

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t bytes = 50000;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  data::write_synthetic_bundle(a.out, a.seed, a.bytes);
  out << "wrote corpus.jsonl and tasks/ to " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ffnlab: FFN placement experiments on small Transformer LMs"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "Build placement plans and print the parity summary");
  plan_cmd->add_option("--preset", plan.preset, "Baseline architecture preset");
  plan_cmd->add_option("--model", plan.model, "Baseline ModelConfig JSON file (instead of --preset)");
  plan_cmd->add_option("--position", plan.position, "first, middle or final")->capture_default_str();
  plan_cmd->add_option("--ratio", plan.ratio, "Percent of layers with an expanded FFN (1..100)")->check(CLI::Range(1, 100));
  plan_cmd->add_flag("--all", plan.all, "Every position and ratio plus the baseline");
  plan_cmd->add_option("--out", plan.out, "Directory for <id>.json plan files");
  plan_cmd->add_flag("--table", plan.table, "Also print the per-layer table of each plan");
  plan_cmd->add_option("--rounding", plan.rounding, "Parity rounding of d'_f: ceil or nearest")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  train_cmd->add_option("--preset", tr.preset, "Baseline architecture preset");
  train_cmd->add_option("--model", tr.model, "ModelConfig JSON file");
  train_cmd->add_option("--plan", tr.plan, "PlacementPlan JSON file (overrides --preset/--model)");
  train_cmd->add_option("--position", tr.position, "Placement position used with --ratio");
  train_cmd->add_option("--ratio", tr.ratio, "Expanded-layer percent used with --position")->check(CLI::Range(1, 100));
  train_cmd->add_option("--train-preset", tr.train_preset, "Training preset")->capture_default_str();
  train_cmd->add_option("--config,--train-config", tr.train_config, "TrainConfig JSON file applied over the preset");
  train_cmd->add_option("--steps", tr.steps, "Total optimizer steps");
  train_cmd->add_option("--warmup", tr.warmup, "Warmup steps");
  train_cmd->add_option("--lr", tr.lr, "Peak learning rate");
  train_cmd->add_option("--batch", tr.batch, "Sequences per step");
  train_cmd->add_option("--seq", tr.seq, "Tokens per sequence");
  train_cmd->add_option("--seed", tr.seed, "Seed for init and data order");
  train_cmd->add_option("--scheduler", tr.scheduler, "cosine or wsd");
  train_cmd->add_option("--checkpoint-interval", tr.interval, "Steps between periodic checkpoints (0 = final only)");
  train_cmd->add_option("--stop-at", tr.stop_at, "Stop after this step (the schedule still spans --steps)");
  train_cmd->add_option("--corpus", tr.corpus, "Corpus file or directory")->required();
  train_cmd->add_option("--tokenizer", tr.tokenizer, "'byte' or a tokenizer JSON file")->capture_default_str();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-step progress lines");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train, evaluate and analyze every configuration of a spec");
  sweep_cmd->add_option("--spec", sw.spec, "ExperimentSpec JSON file")->required();
  sweep_cmd->add_option("--output-root", sw.output_root, "Override the spec's output_root");
  sweep_cmd->add_option("--jobs", sw.jobs, "Concurrent runs (default: spec or FFNLAB_THREADS)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on task files");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--tasks", ev.tasks, "Task .jsonl file or directory")->required();
  eval_cmd->add_option("--out", ev.out, "Report JSON path")->capture_default_str();
  eval_cmd->add_option("--model-id", ev.model_id, "Model id recorded in the report");
  eval_cmd->add_flag("--raw-choices", ev.raw, "Score choices by total rather than per-token log-likelihood");

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "RI tables, averages and layer importance");
  analyze_cmd->add_option("--reports", an.reports, "Directory of EvalReport JSON files")->required();
  analyze_cmd->add_option("--plans", an.plans, "Directory of PlacementPlan JSON files")->required();
  analyze_cmd->add_option("--out", an.out, "Output directory")->capture_default_str();
  analyze_cmd->add_option("--tasks-include", an.include, "Only average these tasks");
  analyze_cmd->add_option("--tasks-exclude", an.exclude, "Leave these tasks out of the average");
  analyze_cmd->add_flag("--keep-below-chance", an.keep_below_chance, "Average tasks even when scored below chance");

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus and matching task files");
  synth_cmd->add_option("--out", sy.out, "Output directory")->required();
  synth_cmd->add_option("--seed", sy.seed, "World seed")->capture_default_str();
  synth_cmd->add_option("--bytes", sy.bytes, "Approximate corpus size")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Prints the help of whichever (sub)command asked for it.
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (plan_cmd->parsed()) return cmd_plan(plan, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (sweep_cmd->parsed()) return cmd_sweep(sw, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (analyze_cmd->parsed()) return cmd_analyze(an, out);
    if (synth_cmd->parsed()) return cmd_synth(sy, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace ffnlab::cli
