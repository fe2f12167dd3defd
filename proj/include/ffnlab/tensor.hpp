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

// Dense tensors with tape-free reverse-mode differentiation. Each result of
// a differentiable op keeps handles to its inputs and a closure that routes
// its gradient back to them; backward() orders the reachable nodes
// topologically and runs every closure once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ffnlab::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  // Empty until something writes a gradient.
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::span<T> grad_buffer();
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<T> values,
                            bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  // Only leaves may be written in place (parameter updates, test setup).
  std::span<T> mutable_values();

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Value of a single-element tensor.
  T item() const;

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires
  // grad. `this` must hold exactly one element.
  void backward() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// The requires-grad subgraph reachable from a root, inputs before outputs.
template <typename T>
class ComputeGraph {
 public:
  static ComputeGraph trace(const Tensor<T>& root);

  const std::vector<Node<T>*>& nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }
  void backward();

 private:
  Node<T>* root_ = nullptr;
  std::vector<Node<T>*> order_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Shapes are row-major; 2-D tensors are [rows,
// cols]. No implicit broadcasting.

// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a * b^T: [m,k] x [n,k] -> [m,n]. Projections store weights as [out, in].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// x * sigmoid(x)
template <typename T>
Tensor<T> swish(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Row-wise x / sqrt(mean(x^2) + eps) * gain, gain of shape [cols].
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, double eps);

// Rotary position embedding over [batch*seq, n_heads*head_dim]; row r sits at
// position r % seq_len. Adjacent pairs (2i, 2i+1) inside each head rotate by
// pos * base^(-2i/head_dim).
template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::size_t seq_len, std::size_t n_heads,
               double base);

// Rows of `table` ([vocab, d]) selected by ids -> [ids.size(), d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t row0, std::size_t rows,
                std::size_t col0, std::size_t cols);

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

// Row-wise softmax. With `causal`, entry (i, j) is masked out for j > i.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal);

// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::span<const std::int32_t> targets);

}  // namespace ffnlab::ad
