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

#include "ffnlab/model.hpp"

#include <cmath>
#include <random>

#include "ffnlab/errors.hpp"

namespace ffnlab {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::standard:
      return "standard";
    case LayerKind::expanded:
      return "expanded";
    case LayerKind::deactivated:
      return "deactivated";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "standard") return LayerKind::standard;
  if (name == "expanded") return LayerKind::expanded;
  if (name == "deactivated") return LayerKind::deactivated;
  throw ConfigError("unknown layer kind '" + name + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (n_layers <= 0) fail("n_layers must be positive");
  if (hidden_dim <= 0 || n_heads <= 0 || n_kv_heads <= 0) {
    fail("hidden_dim, n_heads and n_kv_heads must be positive");
  }
  if (hidden_dim % n_heads != 0) {
    fail("hidden_dim " + std::to_string(hidden_dim) + " not divisible by n_heads " +
         std::to_string(n_heads));
  }
  if (n_heads % n_kv_heads != 0) {
    fail("n_heads " + std::to_string(n_heads) + " not divisible by n_kv_heads " +
         std::to_string(n_kv_heads));
  }
  if (head_dim() % 2 != 0) fail("head dimension must be even for rotary embedding");
  if (vocab_size <= 0 || max_seq_len <= 0) fail("vocab_size and max_seq_len must be positive");
  if (layer_specs.size() != static_cast<std::size_t>(n_layers)) {
    fail("expected " + std::to_string(n_layers) + " layer specs, got " +
         std::to_string(layer_specs.size()));
  }
  for (std::size_t i = 0; i < layer_specs.size(); ++i) {
    const LayerSpec& s = layer_specs[i];
    const std::string where = "layer " + std::to_string(i + 1) + ": ";
    if (s.index != static_cast<int>(i) + 1) fail(where + "index out of order");
    if ((s.kind == LayerKind::deactivated) != (s.ffn_dim == 0)) {
      fail(where + "deactivated layers and only those have ffn_dim 0");
    }
    if (s.ffn_dim < 0) fail(where + "negative ffn_dim");
    if (s.kind == LayerKind::expanded && s.ffn_dim <= base_ffn_dim) {
      fail(where + "expanded ffn_dim " + std::to_string(s.ffn_dim) +
           " must exceed the baseline " + std::to_string(base_ffn_dim));
    }
  }
}

ModelConfig make_baseline_config(int n_layers, std::int64_t hidden_dim, int n_heads,
                                 std::int64_t ffn_dim, std::int64_t vocab_size,
                                 std::int64_t max_seq_len) {
  ModelConfig c;
  c.n_layers = n_layers;
  c.hidden_dim = hidden_dim;
  c.n_heads = n_heads;
  c.n_kv_heads = n_heads;
  c.vocab_size = vocab_size;
  c.max_seq_len = max_seq_len;
  c.base_ffn_dim = ffn_dim;
  for (int i = 1; i <= n_layers; ++i) {
    c.layer_specs.push_back({i, LayerKind::standard, ffn_dim});
  }
  return c;
}

void to_json(nlohmann::json& j, const LayerSpec& s) {
  j = {{"index", s.index}, {"kind", to_string(s.kind)}, {"ffn_dim", s.ffn_dim}};
}

void from_json(const nlohmann::json& j, LayerSpec& s) {
  s.index = j.at("index").get<int>();
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.ffn_dim = j.at("ffn_dim").get<std::int64_t>();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layers", c.n_layers},         {"hidden_dim", c.hidden_dim},
       {"n_heads", c.n_heads},           {"n_kv_heads", c.n_kv_heads},
       {"vocab_size", c.vocab_size},     {"max_seq_len", c.max_seq_len},
       {"base_ffn_dim", c.base_ffn_dim}, {"rope_base", c.rope_base},
       {"norm_eps", c.norm_eps},         {"layer_specs", c.layer_specs}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  try {
    c.n_layers = j.at("n_layers").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<std::int64_t>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_kv_heads = j.value("n_kv_heads", c.n_heads);
    c.vocab_size = j.at("vocab_size").get<std::int64_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::int64_t>();
    c.base_ffn_dim = j.at("base_ffn_dim").get<std::int64_t>();
    c.rope_base = j.value("rope_base", 10000.0);
    c.norm_eps = j.value("norm_eps", 1e-5);
    if (j.contains("layer_specs")) {
      c.layer_specs = j.at("layer_specs").get<std::vector<LayerSpec>>();
    } else {
      c.layer_specs.clear();
      for (int i = 1; i <= c.n_layers; ++i) {
        c.layer_specs.push_back({i, LayerKind::standard, c.base_ffn_dim});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

std::int64_t count_params(const ModelConfig& config, bool include_embeddings) {
  const std::int64_t d = config.hidden_dim;
  const std::int64_t kv = static_cast<std::int64_t>(config.n_kv_heads) * config.head_dim();
  const std::int64_t attention = 2 * d * d + 2 * d * kv;  // q, o and k, v
  std::int64_t total = 0;
  for (const LayerSpec& s : config.layer_specs) {
    total += attention + d;  // pre-attention norm gain
    if (s.has_ffn()) total += 3 * d * s.ffn_dim + d;
  }
  total += d;  // final norm
  if (include_embeddings) total += 2 * config.vocab_size * d;
  return total;
}

}  // namespace ffnlab

namespace ffnlab::model {

using ad::Tensor;

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named() const {
  std::vector<NamedTensor<T>> out;
  out.push_back({"embedding", embedding});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i + 1) + ".";
    const LayerWeights<T>& l = layers[i];
    out.push_back({p + "attn_norm", l.attn_norm});
    out.push_back({p + "wq", l.wq});
    out.push_back({p + "wk", l.wk});
    out.push_back({p + "wv", l.wv});
    out.push_back({p + "wo", l.wo});
    if (l.has_ffn()) {
      out.push_back({p + "ffn_norm", l.ffn_norm});
      out.push_back({p + "w_gate", l.w_gate});
      out.push_back({p + "w_up", l.w_up});
      out.push_back({p + "w_down", l.w_down});
    }
  }
  out.push_back({"final_norm", final_norm});
  out.push_back({"unembedding", unembedding});
  return out;
}

template <typename T>
std::int64_t ModelParams<T>::element_count() const {
  std::int64_t n = 0;
  for (const auto& nt : named()) n += static_cast<std::int64_t>(nt.tensor.numel());
  return n;
}

template <typename T>
ModelParams<T> make_params(const ModelConfig& config) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.hidden_dim);
  const auto kv = static_cast<std::size_t>(config.n_kv_heads * config.head_dim());
  const auto vocab = static_cast<std::size_t>(config.vocab_size);
  ModelParams<T> p;
  p.embedding = Tensor<T>::zeros({vocab, d}, true);
  for (const LayerSpec& s : config.layer_specs) {
    LayerWeights<T> l;
    l.attn_norm = Tensor<T>::full({d}, T(1), true);
    l.wq = Tensor<T>::zeros({d, d}, true);
    l.wk = Tensor<T>::zeros({kv, d}, true);
    l.wv = Tensor<T>::zeros({kv, d}, true);
    l.wo = Tensor<T>::zeros({d, d}, true);
    if (s.has_ffn()) {
      const auto f = static_cast<std::size_t>(s.ffn_dim);
      l.ffn_norm = Tensor<T>::full({d}, T(1), true);
      l.w_gate = Tensor<T>::zeros({f, d}, true);
      l.w_up = Tensor<T>::zeros({f, d}, true);
      l.w_down = Tensor<T>::zeros({d, f}, true);
    }
    p.layers.push_back(std::move(l));
  }
  p.final_norm = Tensor<T>::full({d}, T(1), true);
  p.unembedding = Tensor<T>::zeros({vocab, d}, true);
  return p;
}

template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& x, const LayerWeights<T>& layer) {
  if (!layer.has_ffn()) {
    throw ContractError("ffn_forward: layer has no feed-forward block");
  }
  Tensor<T> gate = ad::swish(ad::matmul_nt(x, layer.w_gate));
  Tensor<T> up = ad::matmul_nt(x, layer.w_up);
  return ad::matmul_nt(ad::mul(gate, up), layer.w_down);
}

template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const LayerWeights<T>& layer,
                            const ModelConfig& config, std::size_t batch,
                            std::size_t seq) {
  const auto n_heads = static_cast<std::size_t>(config.n_heads);
  const auto n_kv = static_cast<std::size_t>(config.n_kv_heads);
  const auto hd = static_cast<std::size_t>(config.head_dim());
  const std::size_t group = n_heads / n_kv;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  Tensor<T> q = ad::rope(ad::matmul_nt(x, layer.wq), seq, n_heads, config.rope_base);
  Tensor<T> k = ad::rope(ad::matmul_nt(x, layer.wk), seq, n_kv, config.rope_base);
  Tensor<T> v = ad::matmul_nt(x, layer.wv);

  std::vector<Tensor<T>> sequences;
  sequences.reserve(batch);
  std::vector<Tensor<T>> heads(n_heads);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t row0 = b * seq;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t kvh = h / group;
      Tensor<T> qh = ad::slice(q, row0, seq, h * hd, hd);
      Tensor<T> kh = ad::slice(k, row0, seq, kvh * hd, hd);
      Tensor<T> vh = ad::slice(v, row0, seq, kvh * hd, hd);
      Tensor<T> probs = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), true);
      heads[h] = ad::matmul(probs, vh);
    }
    sequences.push_back(n_heads == 1 ? heads[0]
                                     : ad::concat_cols<T>(std::span<const Tensor<T>>(heads)));
  }
  Tensor<T> merged = batch == 1 ? sequences[0]
                                : ad::concat_rows<T>(std::span<const Tensor<T>>(sequences));
  return ad::matmul_nt(merged, layer.wo);
}

template <typename T>
Tensor<T> layer_forward(const Tensor<T>& h, const LayerSpec& spec,
                        const LayerWeights<T>& layer, const ModelConfig& config,
                        std::size_t batch, std::size_t seq) {
  if (spec.has_ffn() != layer.has_ffn()) {
    throw ContractError("layer_forward: layer " + std::to_string(spec.index) +
                        " weights do not match its spec");
  }
  Tensor<T> out = ad::add(
      h, attention_forward(ad::rms_norm(h, layer.attn_norm, config.norm_eps), layer,
                           config, batch, seq));
  if (spec.has_ffn()) {
    out = ad::add(out, ffn_forward(ad::rms_norm(out, layer.ffn_norm, config.norm_eps), layer));
  }
  return out;
}

template <typename T>
Transformer<T>::Transformer(ModelConfig config, std::uint64_t seed, double init_std)
    : config_(std::move(config)), params_(make_params<T>(config_)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  for (auto& nt : params_.named()) {
    if (nt.name.ends_with("norm")) continue;
    for (T& v : nt.tensor.mutable_values()) v = static_cast<T>(normal(rng));
  }
}

template <typename T>
Transformer<T>::Transformer(ModelConfig config, ModelParams<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  ModelParams<T> expected = make_params<T>(config_);
  auto want = expected.named();
  auto have = params_.named();
  if (want.size() != have.size()) {
    throw DimensionError("model params: expected " + std::to_string(want.size()) +
                         " tensors, got " + std::to_string(have.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].name != have[i].name || want[i].tensor.shape() != have[i].tensor.shape()) {
      throw DimensionError("model params: tensor " + have[i].name + " " +
                           ad::shape_str(have[i].tensor.shape()) + " does not match " +
                           want[i].name + " " + ad::shape_str(want[i].tensor.shape()));
    }
  }
}

template <typename T>
Tensor<T> Transformer<T>::forward(std::span<const TokenId> tokens) const {
  return forward_batch(tokens, 1, tokens.size());
}

template <typename T>
Tensor<T> Transformer<T>::forward_batch(std::span<const TokenId> tokens,
                                        std::size_t batch, std::size_t seq) const {
  if (seq == 0 || batch == 0 || tokens.size() != batch * seq) {
    throw ContractError("forward: expected " + std::to_string(batch) + "x" +
                        std::to_string(seq) + " tokens, got " +
                        std::to_string(tokens.size()));
  }
  if (seq > static_cast<std::size_t>(config_.max_seq_len)) {
    throw ContractError("forward: sequence length " + std::to_string(seq) +
                        " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  Tensor<T> h = ad::embedding(params_.embedding, tokens);
  for (std::size_t i = 0; i < params_.layers.size(); ++i) {
    h = layer_forward(h, config_.layer_specs[i], params_.layers[i], config_, batch, seq);
  }
  h = ad::rms_norm(h, params_.final_norm, config_.norm_eps);
  return ad::matmul_nt(h, params_.unembedding);
}

#define FFNLAB_INSTANTIATE(T)                                                         \
  template struct ModelParams<T>;                                                     \
  template class Transformer<T>;                                                      \
  template ModelParams<T> make_params(const ModelConfig&);                            \
  template Tensor<T> ffn_forward(const Tensor<T>&, const LayerWeights<T>&);           \
  template Tensor<T> attention_forward(const Tensor<T>&, const LayerWeights<T>&,      \
                                       const ModelConfig&, std::size_t, std::size_t); \
  template Tensor<T> layer_forward(const Tensor<T>&, const LayerSpec&,                \
                                   const LayerWeights<T>&, const ModelConfig&,        \
                                   std::size_t, std::size_t);

FFNLAB_INSTANTIATE(float)
FFNLAB_INSTANTIATE(double)

#undef FFNLAB_INSTANTIATE

}  // namespace ffnlab::model
