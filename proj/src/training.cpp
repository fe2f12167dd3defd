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

#include "ffnlab/training.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "ffnlab/checkpoint.hpp"
#include "ffnlab/errors.hpp"

namespace ffnlab::train {

std::string to_string(Scheduler s) { return s == Scheduler::cosine ? "cosine" : "wsd"; }

Scheduler scheduler_from_string(const std::string& name) {
  if (name == "cosine") return Scheduler::cosine;
  if (name == "wsd") return Scheduler::wsd;
  throw ConfigError("unknown scheduler '" + name + "' (expected cosine or wsd)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (total_steps <= 0) fail("total_steps must be positive");
  if (warmup_steps < 0 || warmup_steps >= total_steps) fail("need 0 <= warmup_steps < total_steps");
  if (!(peak_lr > 0)) fail("peak_lr must be positive");
  if (!(min_lr_ratio >= 0 && min_lr_ratio <= 1)) fail("min_lr_ratio must lie in [0, 1]");
  if (batch_size == 0 || seq_len == 0) fail("batch_size and seq_len must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(grad_clip_norm > 0)) fail("grad_clip_norm must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
  if (!(eps > 0)) fail("eps must be positive");
  if (checkpoint_interval < 0) fail("checkpoint_interval must be non-negative");
  if (scheduler == Scheduler::wsd) {
    if (!(wsd_decay_fraction > 0 && wsd_decay_fraction <= 1)) {
      fail("wsd_decay_fraction must lie in (0, 1]");
    }
    if (wsd_decay_start(*this) < warmup_steps) fail("WSD decay window overlaps warmup");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"total_steps", c.total_steps},
       {"warmup_steps", c.warmup_steps},
       {"peak_lr", c.peak_lr},
       {"min_lr_ratio", c.min_lr_ratio},
       {"scheduler", to_string(c.scheduler)},
       {"wsd_decay_fraction", c.wsd_decay_fraction},
       {"batch_size", c.batch_size},
       {"seq_len", c.seq_len},
       {"weight_decay", c.weight_decay},
       {"grad_clip_norm", c.grad_clip_norm},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"seed", c.seed},
       {"checkpoint_interval", c.checkpoint_interval}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c.total_steps = j.value("total_steps", c.total_steps);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.min_lr_ratio = j.value("min_lr_ratio", c.min_lr_ratio);
    if (j.contains("scheduler")) c.scheduler = scheduler_from_string(j["scheduler"].get<std::string>());
    c.wsd_decay_fraction = j.value("wsd_decay_fraction", c.wsd_decay_fraction);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

std::int64_t wsd_decay_start(const TrainConfig& cfg) {
  const auto window = static_cast<std::int64_t>(
      std::llround(cfg.wsd_decay_fraction * static_cast<double>(cfg.total_steps)));
  return cfg.total_steps - window;
}

double lr_at(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(cfg.total_steps) + "]");
  }
  const double peak = cfg.peak_lr;
  const double floor = peak * cfg.min_lr_ratio;
  if (step < cfg.warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.scheduler == Scheduler::cosine) {
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  const std::int64_t start = wsd_decay_start(cfg);
  if (step <= start) return peak;
  const double progress = static_cast<double>(step - start) /
                          static_cast<double>(cfg.total_steps - start);
  return peak - (peak - floor) * progress;
}

// ---------------------------------------------------------------------------
// AdamW

bool default_decays(const std::string& name) {
  return !(name.ends_with("norm") || name == "embedding");
}

template <typename T>
AdamW<T>::AdamW(std::vector<model::NamedTensor<T>> params,
                const std::function<bool(const std::string&)>& decays) {
  for (auto& p : params) {
    ParamSlot<T> s;
    s.name = p.name;
    s.param = p.tensor;
    s.m.assign(p.tensor.numel(), T(0));
    s.v.assign(p.tensor.numel(), T(0));
    s.decay = decays(p.name);
    slots_.push_back(std::move(s));
  }
}

template <typename T>
void AdamW<T>::step(double lr, const TrainConfig& cfg) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    auto p = s.param.mutable_values();
    std::span<const T> g = s.param.grad();
    const bool has_grad = !g.empty();
    const double shrink = s.decay ? 1.0 - lr * cfg.weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
      const double m = cfg.beta1 * static_cast<double>(s.m[i]) + (1.0 - cfg.beta1) * gi;
      const double v = cfg.beta2 * static_cast<double>(s.v[i]) + (1.0 - cfg.beta2) * gi * gi;
      s.m[i] = static_cast<T>(m);
      s.v[i] = static_cast<T>(v);
      const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) * shrink - lr * update);
    }
  }
}

template <typename T>
double global_grad_norm(const std::vector<ParamSlot<T>>& slots) {
  double sq = 0;
  for (const auto& s : slots) {
    for (T g : s.param.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_grad_norm(std::vector<ParamSlot<T>>& slots, double max_norm) {
  const double norm = global_grad_norm(slots);
  if (norm > max_norm && std::isfinite(norm)) {
    const double factor = max_norm / norm;
    for (auto& s : slots) {
      if (!s.param.has_grad()) continue;
      for (T& g : s.param.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * factor);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Trainer

std::string config_hash(const ModelConfig& model, const TrainConfig& cfg,
                        const data::Tokenizer& tok,
                        const std::vector<std::vector<TokenId>>& documents) {
  std::uint32_t data_crc = 0;
  {
    std::string buf;
    for (const auto& d : documents) {
      buf.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(TokenId));
      buf.push_back('\n');
    }
    data_crc = io::crc32(buf);
  }
  nlohmann::json ident = {{"model", model},
                          {"tokenizer", tok.to_json()},
                          {"batch_size", cfg.batch_size},
                          {"seq_len", cfg.seq_len},
                          {"seed", cfg.seed},
                          {"data_crc32", data_crc}};
  char out[9];
  std::snprintf(out, sizeof(out), "%08x", io::crc32(ident.dump()));
  return out;
}

template <typename T>
Trainer<T>::Trainer(model::Transformer<T> model, TrainConfig cfg, data::Tokenizer tok,
                    std::vector<std::vector<TokenId>> documents)
    : model_(std::move(model)),
      cfg_(cfg),
      tok_(std::move(tok)),
      stream_(documents, data::BatchConfig{cfg.batch_size, cfg.seq_len, cfg.seed}),
      opt_(model_.params().named(), default_decays),
      hash_(config_hash(model_.config(), cfg_, tok_, documents)) {
  cfg_.validate();
  if (static_cast<std::size_t>(model_.config().vocab_size) < tok_.vocab_size()) {
    throw ConfigError("model vocab_size " + std::to_string(model_.config().vocab_size) +
                      " is smaller than the tokenizer's " + std::to_string(tok_.vocab_size()));
  }
  if (cfg_.seq_len > static_cast<std::size_t>(model_.config().max_seq_len)) {
    throw ConfigError("train seq_len " + std::to_string(cfg_.seq_len) + " exceeds max_seq_len " +
                      std::to_string(model_.config().max_seq_len));
  }
}

template <typename T>
Trainer<T>::Trainer(ModelConfig model_config, TrainConfig cfg, data::Tokenizer tok,
                    std::vector<std::vector<TokenId>> documents)
    : Trainer(model::Transformer<T>(std::move(model_config), cfg.seed), cfg, std::move(tok),
              std::move(documents)) {}

template <typename T>
void Trainer<T>::set_config(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.batch_size != cfg_.batch_size || cfg.seq_len != cfg_.seq_len || cfg.seed != cfg_.seed) {
    throw ConfigError("set_config: batch shape and seed are fixed for a run");
  }
  if (step_ > cfg.total_steps) {
    throw ConfigError("set_config: run is already at step " + std::to_string(step_) +
                      ", beyond total_steps " + std::to_string(cfg.total_steps));
  }
  cfg_ = cfg;
}

template <typename T>
StepRecord Trainer<T>::train_step(const data::Batch& batch) {
  if (step_ >= cfg_.total_steps) {
    throw ContractError("train_step: run already reached total_steps " +
                        std::to_string(cfg_.total_steps));
  }
  for (auto& s : opt_.slots()) s.param.zero_grad();
  const auto inputs = batch.inputs();
  const auto targets = batch.targets();
  ad::Tensor<T> logits = model_.forward_batch(inputs, batch.batch_size, batch.seq_len);
  ad::Tensor<T> loss = ad::softmax_cross_entropy(logits, targets);
  loss.backward();
  const double loss_value = static_cast<double>(loss.item());
  const double norm = clip_grad_norm(opt_.slots(), cfg_.grad_clip_norm);
  if (!std::isfinite(loss_value) || !std::isfinite(norm)) {
    std::map<std::string, double> by_layer;
    for (const auto& s : opt_.slots()) {
      std::string group = s.name;
      if (group.starts_with("layers.")) group = group.substr(0, group.find('.', 7));
      double sq = 0;
      for (T g : s.param.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
      by_layer[group] += sq;
    }
    std::ostringstream os;
    os << "non-finite loss " << loss_value << " (grad norm " << norm << ") at step "
       << step_ + 1 << "; gradient norms:";
    for (const auto& [group, sq] : by_layer) os << ' ' << group << '=' << std::sqrt(sq);
    throw TrainingAborted(os.str());
  }
  ++step_;
  const double lr = lr_at(step_, cfg_);
  opt_.step(lr, cfg_);
  StepRecord rec{step_, lr, loss_value, norm};
  history_.push_back(rec);
  return rec;
}

template <typename T>
void Trainer<T>::save_checkpoint(const std::filesystem::path& path) const {
  io::Container c;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : history_) history.push_back({r.step, r.lr, r.loss, r.grad_norm});
  c.meta["kind"] = "train_state";
  c.meta["config_hash"] = hash_;
  c.meta["step"] = step_;
  c.meta["train_config"] = cfg_;
  c.meta["tokenizer"] = tok_.to_json();
  c.meta["stream"] = stream_.state();
  c.meta["history"] = history;
  io::add_model(c, model_);
  for (const auto& s : opt_.slots()) {
    c.add<T>("adam_m/" + s.name, s.param.shape(), std::span<const T>(s.m));
    c.add<T>("adam_v/" + s.name, s.param.shape(), std::span<const T>(s.v));
  }
  io::write_container(path, c);
}

template <typename T>
Trainer<T> Trainer<T>::resume(const std::filesystem::path& checkpoint, TrainConfig cfg,
                              data::Tokenizer tok, std::vector<std::vector<TokenId>> documents) {
  io::Container c = io::read_container(checkpoint);
  if (c.meta.value("kind", "") != "train_state") {
    throw ConfigError("resume: " + checkpoint.string() + " holds no training state");
  }
  if (c.meta.value("precision", "") != io::to_string(io::dtype_of<T>())) {
    throw ConfigError("resume: checkpoint precision " + c.meta.value("precision", "?") +
                      " does not match this run");
  }
  model::Transformer<T> model = io::load_model<T>(c);
  const std::string stored = c.meta.at("config_hash").get<std::string>();
  const std::string expected = config_hash(model.config(), cfg, tok, documents);
  if (stored != expected) {
    throw ConfigError("resume: config hash " + expected + " does not match checkpoint hash " +
                      stored + " (architecture, tokenizer, batch shape, seed or corpus changed)");
  }
  const auto step = c.meta.at("step").get<std::int64_t>();
  if (step > cfg.total_steps) {
    throw ConfigError("resume: checkpoint step " + std::to_string(step) + " beyond total_steps " +
                      std::to_string(cfg.total_steps));
  }
  Trainer t(std::move(model), cfg, std::move(tok), std::move(documents));
  for (auto& s : t.opt_.slots()) {
    s.m = c.values<T>("adam_m/" + s.name);
    s.v = c.values<T>("adam_v/" + s.name);
    if (s.m.size() != s.param.numel() || s.v.size() != s.param.numel()) {
      throw DimensionError("resume: optimizer moments for " + s.name + " do not match");
    }
  }
  t.step_ = step;
  t.opt_.set_steps_taken(step);
  t.stream_.restore(c.meta.at("stream").get<data::StreamState>());
  for (const auto& r : c.meta.at("history")) {
    t.history_.push_back({r.at(0).get<std::int64_t>(), r.at(1).get<double>(),
                          r.at(2).get<double>(), r.at(3).get<double>()});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Runs

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_log_csv(const std::filesystem::path& path, const std::vector<StepRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,lr,loss,grad_norm\n";
  for (const auto& r : records) {
    out << r.step << ',' << format_number(r.lr) << ',' << format_number(r.loss) << ','
        << format_number(r.grad_norm) << '\n';
  }
}

RunResult run_training(const ModelConfig& model_config, const TrainConfig& cfg,
                       const data::Tokenizer& tok,
                       const std::vector<std::vector<TokenId>>& documents,
                       const RunOptions& options) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(options.out_dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());
  const fs::path latest = options.out_dir / "checkpoint.ckpt";

  std::optional<fs::path> from = options.resume_from;
  if (!from && options.resume_latest && fs::exists(latest)) from = latest;
  Trainer<float> trainer = from ? Trainer<float>::resume(*from, cfg, tok, documents)
                                : Trainer<float>(model_config, cfg, tok, documents);
  if (from && trainer.model().config() != model_config) {
    throw ConfigError("resume: checkpoint architecture differs from the requested one");
  }

  const std::int64_t stop = std::min(options.stop_at.value_or(cfg.total_steps), cfg.total_steps);
  while (trainer.current_step() < stop) {
    StepRecord rec = trainer.step();
    if (options.on_step) options.on_step(rec);
    if (cfg.checkpoint_interval > 0 && rec.step % cfg.checkpoint_interval == 0) {
      trainer.save_checkpoint(options.out_dir / "checkpoints" /
                              ("step_" + std::to_string(rec.step) + ".ckpt"));
      trainer.save_checkpoint(latest);
      write_log_csv(options.out_dir / "train_log.csv", trainer.history());
    }
  }
  trainer.save_checkpoint(latest);
  write_log_csv(options.out_dir / "train_log.csv", trainer.history());
  return {trainer.current_step(), trainer.history(), latest};
}

#define FFNLAB_INSTANTIATE(T)                                                \
  template class AdamW<T>;                                                   \
  template class Trainer<T>;                                                 \
  template double global_grad_norm(const std::vector<ParamSlot<T>>&);        \
  template double clip_grad_norm(std::vector<ParamSlot<T>>&, double);

FFNLAB_INSTANTIATE(float)
FFNLAB_INSTANTIATE(double)

#undef FFNLAB_INSTANTIATE

}  // namespace ffnlab::train
