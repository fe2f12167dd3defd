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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffnlab/tensor.hpp"

namespace ffnlab {

using TokenId = std::int32_t;

enum class LayerKind { standard, expanded, deactivated };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  int index = 0;  // 1-based
  LayerKind kind = LayerKind::standard;
  std::int64_t ffn_dim = 0;

  bool has_ffn() const { return kind != LayerKind::deactivated; }
  bool operator==(const LayerSpec&) const = default;
};

struct ModelConfig {
  int n_layers = 0;
  std::int64_t hidden_dim = 0;
  int n_heads = 0;
  int n_kv_heads = 0;
  std::int64_t vocab_size = 0;
  std::int64_t max_seq_len = 0;
  // d_f of the standard layer this architecture is derived from.
  std::int64_t base_ffn_dim = 0;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  std::vector<LayerSpec> layer_specs;

  std::int64_t head_dim() const { return hidden_dim / n_heads; }
  // Throws ConfigError describing the first violated invariant.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// All layers standard with ffn_dim = base_ffn_dim.
ModelConfig make_baseline_config(int n_layers, std::int64_t hidden_dim, int n_heads,
                                 std::int64_t ffn_dim, std::int64_t vocab_size,
                                 std::int64_t max_seq_len);

void to_json(nlohmann::json& j, const LayerSpec& s);
void from_json(const nlohmann::json& j, LayerSpec& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Exact number of learnable scalars. Without embeddings, the token
// embedding and the unembedding matrix are left out.
std::int64_t count_params(const ModelConfig& config, bool include_embeddings);

}  // namespace ffnlab

namespace ffnlab::model {

template <typename T>
struct LayerWeights {
  ad::Tensor<T> attn_norm;  // [d]
  ad::Tensor<T> wq, wk, wv, wo;
  // Undefined for deactivated layers.
  ad::Tensor<T> ffn_norm;  // [d]
  ad::Tensor<T> w_gate, w_up;  // [ffn_dim, d]
  ad::Tensor<T> w_down;        // [d, ffn_dim]

  bool has_ffn() const { return w_down.defined(); }
};

template <typename T>
struct NamedTensor {
  std::string name;
  ad::Tensor<T> tensor;
};

template <typename T>
struct ModelParams {
  ad::Tensor<T> embedding;  // [vocab, d]
  std::vector<LayerWeights<T>> layers;
  ad::Tensor<T> final_norm;   // [d]
  ad::Tensor<T> unembedding;  // [vocab, d]

  // Every tensor in a fixed order with stable names such as
  // "layers.3.w_gate".
  std::vector<NamedTensor<T>> named() const;
  std::int64_t element_count() const;
};

// SwiGLU feed-forward block: W_down (swish(W_gate x) * (W_up x)).
template <typename T>
ad::Tensor<T> ffn_forward(const ad::Tensor<T>& x, const LayerWeights<T>& layer);

// Causal multi-head self-attention over `batch` packed sequences of length
// `seq` (x is [batch*seq, d]), without the residual.
template <typename T>
ad::Tensor<T> attention_forward(const ad::Tensor<T>& x, const LayerWeights<T>& layer,
                                const ModelConfig& config, std::size_t batch,
                                std::size_t seq);

// Pre-norm residual layer. Deactivated layers run attention only.
template <typename T>
ad::Tensor<T> layer_forward(const ad::Tensor<T>& h, const LayerSpec& spec,
                            const LayerWeights<T>& layer, const ModelConfig& config,
                            std::size_t batch, std::size_t seq);

template <typename T>
class Transformer {
 public:
  // normal(0, init_std) projections and embeddings, unit norm gains.
  Transformer(ModelConfig config, std::uint64_t seed, double init_std = 0.02);
  Transformer(ModelConfig config, ModelParams<T> params);

  const ModelConfig& config() const { return config_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }

  // tokens[seq] -> logits [seq, vocab]
  ad::Tensor<T> forward(std::span<const TokenId> tokens) const;
  // tokens[batch*seq] packed row-major -> logits [batch*seq, vocab]
  ad::Tensor<T> forward_batch(std::span<const TokenId> tokens, std::size_t batch,
                              std::size_t seq) const;

 private:
  ModelConfig config_;
  ModelParams<T> params_;
};

// Allocates zero-valued parameters shaped for `config`.
template <typename T>
ModelParams<T> make_params(const ModelConfig& config);

}  // namespace ffnlab::model
