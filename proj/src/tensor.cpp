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

#include "ffnlab/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "ffnlab/errors.hpp"

namespace ffnlab::ad {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
bool wants_grad(const Node<T>& n) {
  return n.requires_grad;
}

// Builds a result node; records inputs and the backward closure only when
// recording is on and some input requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<NodePtr<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) any = any || in->requires_grad;
  }
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
std::span<T> Node<T>::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), T(0));
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
  std::vector<T> values(ad::numel(shape), fill);
  return from_values(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_values(Shape shape, std::vector<T> values,
                                 bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(ad::numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  if (!node_->is_leaf()) {
    throw ContractError("mutable_values: only leaf tensors may be modified");
  }
  return node_->value;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor of shape " + shape_str(shape()) +
                        " is not a scalar");
  }
  return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() const {
  if (!defined() || numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (defined() ? shape_str(shape()) : std::string("undefined")));
  }
  ComputeGraph<T>::trace(*this).backward();
}

// ---------------------------------------------------------------------------
// Recording control

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// ComputeGraph

template <typename T>
ComputeGraph<T> ComputeGraph<T>::trace(const Tensor<T>& root) {
  ComputeGraph g;
  g.root_ = root.node();
  if (!g.root_->requires_grad) return g;
  // Iterative post-order DFS.
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(g.root_, 0);
  visited.insert(g.root_);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      g.order_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

template <typename T>
void ComputeGraph<T>::backward() {
  if (order_.empty()) return;
  for (Node<T>* n : order_) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  root_->grad_buffer()[0] += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  Map<T>(out.data(), m, n).noalias() =
      MapC<T>(a.values().data(), m, k) * MapC<T>(b.values().data(), k, n);
  return make_result<T>(
      "matmul", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
      [m, k, n](Node<T>& self) {
        MapC<T> g(self.grad.data(), m, n);
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) {
          Map<T>(pa.grad_buffer().data(), m, k).noalias() +=
              g * MapC<T>(pb.value.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
          Map<T>(pb.grad_buffer().data(), k, n).noalias() +=
              MapC<T>(pa.value.data(), m, k).transpose() * g;
        }
      });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree: " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
  }
  std::vector<T> out(m * n);
  Map<T>(out.data(), m, n).noalias() =
      MapC<T>(a.values().data(), m, k) *
      MapC<T>(b.values().data(), n, k).transpose();
  return make_result<T>(
      "matmul_nt", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
      [m, k, n](Node<T>& self) {
        MapC<T> g(self.grad.data(), m, n);
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) {
          Map<T>(pa.grad_buffer().data(), m, k).noalias() +=
              g * MapC<T>(pb.value.data(), n, k);
        }
        if (pb.requires_grad) {
          Map<T>(pb.grad_buffer().data(), n, k).noalias() +=
              g.transpose() * MapC<T>(pa.value.data(), m, k);
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>("add", a.shape(), std::move(out),
                        {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
                          for (auto& p : self.parents) {
                            if (!p->requires_grad) continue;
                            auto g = p->grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>("sub", a.shape(), std::move(out),
                        {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
                          Node<T>& pa = *self.parents[0];
                          Node<T>& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            auto g = pa.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i];
                          }
                          if (pb.requires_grad) {
                            auto g = pb.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] -= self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>("mul", a.shape(), std::move(out),
                        {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
                          Node<T>& pa = *self.parents[0];
                          Node<T>& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            auto g = pa.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i] * pb.value[i];
                          }
                          if (pb.requires_grad) {
                            auto g = pb.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i] * pa.value[i];
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_result<T>("scale", a.shape(), std::move(out), {a.node_ptr()},
                        [factor](Node<T>& self) {
                          auto g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i)
                            g[i] += self.grad[i] * factor;
                        });
}

template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-xv[i]));
    out[i] = xv[i] * s;
  }
  return make_result<T>("swish", x.shape(), std::move(out), {x.node_ptr()},
                        [](Node<T>& self) {
                          Node<T>& px = *self.parents[0];
                          auto g = px.grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T v = px.value[i];
                            const T s = T(1) / (T(1) + std::exp(-v));
                            g[i] += self.grad[i] * (s + v * s * (T(1) - s));
                          }
                        });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  return make_result<T>("sum", {}, {acc}, {x.node_ptr()}, [](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T n = static_cast<T>(x.numel());
  T acc = 0;
  for (T v : x.values()) acc += v;
  return make_result<T>("mean", {}, {acc / n}, {x.node_ptr()},
                        [n](Node<T>& self) {
                          auto g = self.parents[0]->grad_buffer();
                          for (auto& gi : g) gi += self.grad[0] / n;
                        });
}

// ---------------------------------------------------------------------------
// Normalization and positions

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, double eps) {
  require_rank2(x, "rms_norm");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != cols) {
    throw DimensionError("rms_norm: gain " + shape_str(gain.shape()) +
                         " does not match input " + shape_str(x.shape()));
  }
  std::vector<T> out(rows * cols);
  std::vector<T> inv_rms(rows);
  auto xv = x.values();
  auto gv = gain.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * cols;
    T ms = 0;
    for (std::size_t c = 0; c < cols; ++c) ms += xr[c] * xr[c];
    ms /= static_cast<T>(cols);
    const T inv = T(1) / std::sqrt(ms + static_cast<T>(eps));
    inv_rms[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xr[c] * inv * gv[c];
  }
  return make_result<T>(
      "rms_norm", x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr()},
      [rows, cols, inv_rms = std::move(inv_rms)](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pg = *self.parents[1];
        const T* xv = px.value.data();
        const T* gv = pg.value.data();
        const T* dy = self.grad.data();
        if (pg.requires_grad) {
          auto dg = pg.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
              dg[c] += dy[r * cols + c] * xv[r * cols + c] * inv_rms[r];
        }
        if (px.requires_grad) {
          auto dx = px.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            const T inv = inv_rms[r];
            T dot = 0;
            for (std::size_t c = 0; c < cols; ++c) {
              dot += dy[r * cols + c] * gv[c] * xv[r * cols + c] * inv;
            }
            dot /= static_cast<T>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
              const T xhat = xv[r * cols + c] * inv;
              dx[r * cols + c] += inv * (dy[r * cols + c] * gv[c] - xhat * dot);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::size_t seq_len, std::size_t n_heads,
               double base) {
  require_rank2(x, "rope");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (seq_len == 0 || rows % seq_len != 0) {
    throw DimensionError("rope: " + std::to_string(rows) +
                         " rows are not a whole number of sequences of length " +
                         std::to_string(seq_len));
  }
  if (n_heads == 0 || cols % n_heads != 0 || (cols / n_heads) % 2 != 0) {
    throw DimensionError("rope: width " + std::to_string(cols) +
                         " does not split into " + std::to_string(n_heads) +
                         " even-sized heads");
  }
  const std::size_t head_dim = cols / n_heads;
  const std::size_t half = head_dim / 2;
  // Rotation table [seq_len, half] of (cos, sin), computed in double.
  std::vector<T> cos_t(seq_len * half), sin_t(seq_len * half);
  for (std::size_t p = 0; p < seq_len; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq =
          std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(p) * freq;
      cos_t[p * half + i] = static_cast<T>(std::cos(angle));
      sin_t[p * half + i] = static_cast<T>(std::sin(angle));
    }
  }
  std::vector<T> out(rows * cols);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t p = r % seq_len;
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t c = r * cols + h * head_dim + 2 * i;
        const T co = cos_t[p * half + i], si = sin_t[p * half + i];
        out[c] = xv[c] * co - xv[c + 1] * si;
        out[c + 1] = xv[c] * si + xv[c + 1] * co;
      }
    }
  }
  return make_result<T>(
      "rope", x.shape(), std::move(out), {x.node_ptr()},
      [rows, cols, seq_len, n_heads, head_dim, half, cos_t = std::move(cos_t),
       sin_t = std::move(sin_t)](Node<T>& self) {
        auto dx = self.parents[0]->grad_buffer();
        const T* g = self.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t p = r % seq_len;
          for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < half; ++i) {
              const std::size_t c = r * cols + h * head_dim + 2 * i;
              const T co = cos_t[p * half + i], si = sin_t[p * half + i];
              dx[c] += g[c] * co + g[c + 1] * si;
              dx[c + 1] += -g[c] * si + g[c + 1] * co;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(ids[i]) +
                       " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + i * d);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result<T>("embedding", {ids.size(), d}, std::move(out),
                        {table.node_ptr()},
                        [d, saved = std::move(saved)](Node<T>& self) {
                          auto g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            T* row = g.data() + static_cast<std::size_t>(saved[i]) * d;
                            const T* src = self.grad.data() + i * d;
                            for (std::size_t c = 0; c < d; ++c) row[c] += src[c];
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t row0, std::size_t rows,
                std::size_t col0, std::size_t cols) {
  require_rank2(x, "slice");
  const std::size_t src_rows = x.dim(0), src_cols = x.dim(1);
  if (row0 + rows > src_rows || col0 + cols > src_cols) {
    throw DimensionError("slice: window rows [" + std::to_string(row0) + ", " +
                         std::to_string(row0 + rows) + ") cols [" +
                         std::to_string(col0) + ", " + std::to_string(col0 + cols) +
                         ") exceeds " + shape_str(x.shape()));
  }
  std::vector<T> out(rows * cols);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data() + (row0 + r) * src_cols + col0, cols,
                out.data() + r * cols);
  }
  return make_result<T>(
      "slice", {rows, cols}, std::move(out), {x.node_ptr()},
      [row0, rows, col0, cols, src_cols](Node<T>& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          T* dst = g.data() + (row0 + r) * src_cols + col0;
          const T* src = self.grad.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
      });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row count mismatch " +
                           shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(p.dim(1));
    cols += p.dim(1);
    inputs.push_back(p.node_ptr());
  }
  std::vector<T> out(rows * cols);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * widths[k], widths[k],
                  out.data() + r * cols + offset);
    }
    offset += widths[k];
  }
  return make_result<T>(
      "concat_cols", {rows, cols}, std::move(out), std::move(inputs),
      [rows, cols, widths = std::move(widths)](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          Node<T>& p = *self.parents[k];
          if (p.requires_grad) {
            auto g = p.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c)
                g[r * widths[k] + c] += self.grad[r * cols + off + c];
          }
          off += widths[k];
        }
      });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.dim(1) != cols) {
      throw DimensionError("concat_rows: column count mismatch " +
                           shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    rows += p.dim(0);
    inputs.push_back(p.node_ptr());
  }
  std::vector<T> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result<T>("concat_rows", {rows, cols}, std::move(out),
                        std::move(inputs), [](Node<T>& self) {
                          std::size_t off = 0;
                          for (auto& p : self.parents) {
                            const std::size_t n = p->value.size();
                            if (p->requires_grad) {
                              auto g = p->grad_buffer();
                              for (std::size_t i = 0; i < n; ++i)
                                g[i] += self.grad[off + i];
                            }
                            off += n;
                          }
                        });
}

// ---------------------------------------------------------------------------
// Softmax family

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal) {
  require_rank2(x, "softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(rows * cols, T(0));
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t live = causal ? std::min(cols, r + 1) : cols;
    const T* xr = xv.data() + r * cols;
    T* yr = out.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < live; ++c) mx = std::max(mx, xr[c]);
    T z = 0;
    for (std::size_t c = 0; c < live; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      z += yr[c];
    }
    for (std::size_t c = 0; c < live; ++c) yr[c] /= z;
  }
  return make_result<T>("softmax_rows", x.shape(), std::move(out),
                        {x.node_ptr()}, [rows, cols, causal](Node<T>& self) {
                          auto dx = self.parents[0]->grad_buffer();
                          const T* y = self.value.data();
                          const T* g = self.grad.data();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t live =
                                causal ? std::min(cols, r + 1) : cols;
                            T dot = 0;
                            for (std::size_t c = 0; c < live; ++c)
                              dot += g[r * cols + c] * y[r * cols + c];
                            for (std::size_t c = 0; c < live; ++c)
                              dx[r * cols + c] +=
                                  y[r * cols + c] * (g[r * cols + c] - dot);
                          }
                        });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::span<const std::int32_t> targets) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  for (auto t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= cols) {
      throw IndexError("softmax_cross_entropy: target id " + std::to_string(t) +
                       " outside vocabulary of size " + std::to_string(cols));
    }
  }
  auto lv = logits.values();
  // Row-wise softmax is kept for the backward pass.
  std::vector<T> probs(rows * cols);
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* lr = lv.data() + r * cols;
    T* pr = probs.data() + r * cols;
    T mx = lr[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, lr[c]);
    T z = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      pr[c] = std::exp(lr[c] - mx);
      z += pr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) pr[c] /= z;
    total += static_cast<double>(std::log(z) + mx - lr[targets[r]]);
  }
  const T loss = static_cast<T>(total / static_cast<double>(rows));
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_result<T>(
      "softmax_cross_entropy", {}, {loss}, {logits.node_ptr()},
      [rows, cols, probs = std::move(probs), saved = std::move(saved)](Node<T>& self) {
        auto dx = self.parents[0]->grad_buffer();
        const T coef = self.grad[0] / static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c)
            dx[r * cols + c] += coef * probs[r * cols + c];
          dx[r * cols + static_cast<std::size_t>(saved[r])] -= coef;
        }
      });
}

// ---------------------------------------------------------------------------
// Instantiations

#define FFNLAB_INSTANTIATE(T)                                                   \
  template struct Node<T>;                                                      \
  template class Tensor<T>;                                                     \
  template class ComputeGraph<T>;                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                \
  template Tensor<T> swish(const Tensor<T>&);                                   \
  template Tensor<T> sum(const Tensor<T>&);                                     \
  template Tensor<T> mean(const Tensor<T>&);                                    \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&, double);      \
  template Tensor<T> rope(const Tensor<T>&, std::size_t, std::size_t, double);  \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>); \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t,          \
                           std::size_t, std::size_t);                           \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                   \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                   \
  template Tensor<T> softmax_rows(const Tensor<T>&, bool);                      \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&,                    \
                                           std::span<const std::int32_t>);

FFNLAB_INSTANTIATE(float)
FFNLAB_INSTANTIATE(double)

#undef FFNLAB_INSTANTIATE

}  // namespace ffnlab::ad
