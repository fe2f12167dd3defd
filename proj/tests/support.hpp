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

// Helpers shared by the unit tests and the acceptance binary. Nothing here
// calls back into the code under test for the values it checks against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <random>
#include <string>
#include <vector>

#include "ffnlab/evaluation.hpp"
#include "ffnlab/model.hpp"
#include "ffnlab/tensor.hpp"

namespace ffnlab::testing {

using ad::Tensor;

inline std::filesystem::path fixture_dir() { return FFNLAB_FIXTURE_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ffnlab_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Tensor<double> random_tensor(ad::Shape shape, std::uint64_t seed, bool grad = true,
                                    double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<double>::from_values(std::move(shape), std::move(v), grad);
}

inline double rel_err(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

struct GradCheck {
  double max_rel = 0;
  std::size_t checked = 0;
  std::string worst;
};

// Central differences of `loss` with respect to every entry of every input,
// compared against one autodiff backward pass.
inline GradCheck check_gradients(std::vector<std::pair<std::string, Tensor<double>>> inputs,
                                 const std::function<Tensor<double>()>& loss, double eps = 1e-6,
                                 double floor = 1e-6) {
  for (auto& [n, t] : inputs) t.zero_grad();
  loss().backward();
  GradCheck out;
  for (auto& [name, t] : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      double up, down;
      {
        ad::NoGradGuard g;
        vals[i] = keep + eps;
        up = loss().item();
        vals[i] = keep - eps;
        down = loss().item();
      }
      vals[i] = keep;
      const double numeric = (up - down) / (2 * eps);
      const double e = rel_err(analytic[i], numeric, floor);
      ++out.checked;
      if (e > out.max_rel) {
        out.max_rel = e;
        out.worst = name + "[" + std::to_string(i) + "] autodiff " + std::to_string(analytic[i]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

// Straight-line forward pass over plain vectors, written from the model
// equations: pre-norm residual layers, causal multi-head attention with
// rotary positions, SwiGLU feed-forward, RMS normalization.
struct ReferenceModel {
  ModelConfig cfg;
  // name -> row-major values, same names as ModelParams::named()
  std::map<std::string, std::vector<double>> w;

  static ReferenceModel from(const model::Transformer<double>& m) {
    ReferenceModel r;
    r.cfg = m.config();
    for (const auto& nt : m.params().named()) {
      r.w[nt.name] = std::vector<double>(nt.tensor.values().begin(), nt.tensor.values().end());
    }
    return r;
  }

  using Mat = std::vector<std::vector<double>>;

  // y[i] = W x[i], W stored [out, in]
  static Mat project(const Mat& x, const std::vector<double>& W, std::size_t out) {
    const std::size_t in = x[0].size();
    Mat y(x.size(), std::vector<double>(out, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t o = 0; o < out; ++o) {
        double s = 0;
        for (std::size_t k = 0; k < in; ++k) s += W[o * in + k] * x[i][k];
        y[i][o] = s;
      }
    }
    return y;
  }

  Mat rms(const Mat& x, const std::vector<double>& g) const {
    Mat y = x;
    for (auto& row : y) {
      double ms = 0;
      for (double v : row) ms += v * v;
      ms /= static_cast<double>(row.size());
      const double inv = 1.0 / std::sqrt(ms + cfg.norm_eps);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = row[j] * inv * g[j];
    }
    return y;
  }

  void rotate(Mat& x, std::size_t heads) const {
    const std::size_t hd = x[0].size() / heads;
    for (std::size_t pos = 0; pos < x.size(); ++pos) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < hd / 2; ++i) {
          const double theta = static_cast<double>(pos) *
                               std::pow(cfg.rope_base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
          double& a = x[pos][h * hd + 2 * i];
          double& b = x[pos][h * hd + 2 * i + 1];
          const double a0 = a, b0 = b;
          a = a0 * std::cos(theta) - b0 * std::sin(theta);
          b = a0 * std::sin(theta) + b0 * std::cos(theta);
        }
      }
    }
  }

  Mat logits(const std::vector<TokenId>& tokens) const {
    const auto d = static_cast<std::size_t>(cfg.hidden_dim);
    const auto heads = static_cast<std::size_t>(cfg.n_heads);
    const auto kv_heads = static_cast<std::size_t>(cfg.n_kv_heads);
    const std::size_t hd = d / heads;
    const std::size_t n = tokens.size();
    Mat h(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) h[i][j] = w.at("embedding")[static_cast<std::size_t>(tokens[i]) * d + j];
    }
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layers." + std::to_string(l + 1) + ".";
      Mat x = rms(h, w.at(p + "attn_norm"));
      Mat q = project(x, w.at(p + "wq"), d);
      Mat k = project(x, w.at(p + "wk"), kv_heads * hd);
      Mat v = project(x, w.at(p + "wv"), kv_heads * hd);
      rotate(q, heads);
      rotate(k, kv_heads);
      Mat att(n, std::vector<double>(d, 0.0));
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const std::size_t kh = hh / (heads / kv_heads);
        for (std::size_t i = 0; i < n; ++i) {
          std::vector<double> s(i + 1);
          double mx = -1e300;
          for (std::size_t j = 0; j <= i; ++j) {
            double dot = 0;
            for (std::size_t c = 0; c < hd; ++c) dot += q[i][hh * hd + c] * k[j][kh * hd + c];
            s[j] = dot / std::sqrt(static_cast<double>(hd));
            mx = std::max(mx, s[j]);
          }
          double z = 0;
          for (auto& e : s) z += (e = std::exp(e - mx));
          for (std::size_t j = 0; j <= i; ++j) {
            for (std::size_t c = 0; c < hd; ++c) att[i][hh * hd + c] += s[j] / z * v[j][kh * hd + c];
          }
        }
      }
      Mat o = project(att, w.at(p + "wo"), d);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) h[i][j] += o[i][j];
      }
      const auto& spec = cfg.layer_specs[static_cast<std::size_t>(l)];
      if (!spec.has_ffn()) continue;
      const auto f = static_cast<std::size_t>(spec.ffn_dim);
      Mat y = rms(h, w.at(p + "ffn_norm"));
      Mat g = project(y, w.at(p + "w_gate"), f);
      Mat u = project(y, w.at(p + "w_up"), f);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) g[i][j] = g[i][j] / (1.0 + std::exp(-g[i][j])) * u[i][j];
      }
      Mat down = project(g, w.at(p + "w_down"), d);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) h[i][j] += down[i][j];
      }
    }
    return project(rms(h, w.at("final_norm")), w.at("unembedding"), static_cast<std::size_t>(cfg.vocab_size));
  }
};

// ---------------------------------------------------------------------------
// Toy language models for the evaluation protocol.

class UniformLM final : public eval::LanguageModel {
 public:
  UniformLM(std::size_t vocab, std::size_t max_seq) : v_(vocab), s_(max_seq) {}
  std::size_t vocab_size() const override { return v_; }
  std::size_t max_seq_len() const override { return s_; }
  std::vector<double> logits(std::span<const TokenId> t) const override {
    return std::vector<double>(t.size() * v_, 0.25);
  }

 private:
  std::size_t v_, s_;
};

// Logits drawn from a hash of the prefix, so row i depends on tokens[0..i].
class RandomLM final : public eval::LanguageModel {
 public:
  RandomLM(std::size_t vocab, std::size_t max_seq, std::uint64_t seed) : v_(vocab), s_(max_seq), seed_(seed) {}
  std::size_t vocab_size() const override { return v_; }
  std::size_t max_seq_len() const override { return s_; }
  std::vector<double> logits(std::span<const TokenId> t) const override {
    std::vector<double> out(t.size() * v_);
    std::uint64_t h = seed_;
    for (std::size_t i = 0; i < t.size(); ++i) {
      h = mix(h ^ static_cast<std::uint64_t>(t[i] + 1));
      std::uint64_t r = h;
      for (std::size_t j = 0; j < v_; ++j) {
        r = mix(r);
        out[i * v_ + j] = 4.0 * static_cast<double>(r >> 11) / 9007199254740992.0;
      }
    }
    return out;
  }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::size_t v_, s_;
  std::uint64_t seed_;
};

// Predicts the next token from the last one through a fixed table: a letter
// is followed by the next letter, a space by 'a', anything else by a space.
class LookupLM final : public eval::LanguageModel {
 public:
  std::size_t vocab_size() const override { return 259; }
  std::size_t max_seq_len() const override { return 256; }
  static TokenId next(TokenId t) {
    if (t >= 'a' && t < 'z') return t + 1;
    if (t == ' ') return 'a';
    return ' ';
  }
  std::vector<double> logits(std::span<const TokenId> t) const override {
    std::vector<double> out(t.size() * 259, 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) out[i * 259 + static_cast<std::size_t>(next(t[i]))] = 5.0;
    return out;
  }
};

}  // namespace ffnlab::testing
