// Copyright 2026 The mixq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "mixq/tensor.hpp"

namespace mixq::ad {

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
  friend bool operator==(Var, Var) = default;
  friend auto operator<=>(Var, Var) = default;
};

enum class Op {
  Leaf,
  Matmul,
  Transpose,
  Add,
  AddRow,
  Mul,
  Scale,
  SoftmaxRows,
  Gelu,
  LayerNorm,
  MeanRows,
  SliceCols,
  ConcatCols,
  Sum,
  Tap,              // identity whose forward value may be edited (probes, finite differences)
  StraightThrough,  // forward value replaced (fake quantization), identity gradient
};

const char* op_name(Op op) noexcept;

template <typename T>
struct Node {
  Op op = Op::Leaf;
  std::vector<Var> inputs;
  Tensor<T> value;
  bool requires_grad = false;
  bool parameter = false;
  T scalar{0};            // Scale factor, LayerNorm eps
  std::size_t offset = 0;  // SliceCols begin column
  std::vector<T> saved;   // LayerNorm: per-row mean then per-row reciprocal std
};

template <typename T>
class Gradients {
 public:
  explicit Gradients(std::size_t n) : grads_(n) {}
  bool has(Var v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }
  const Tensor<T>& operator[](Var v) const;
  std::optional<Tensor<T>>& slot(Var v) { return grads_.at(v.id); }

 private:
  std::vector<std::optional<Tensor<T>>> grads_;
};

/// Append-only tape. Nodes are created in topological order by construction;
/// backward() visits every node once in reverse creation order and accumulates
/// into inputs in input order, so gradients are bitwise reproducible.
///
/// Single owner: a graph is not safe to grow or differentiate concurrently.
template <typename T>
class Graph {
 public:
  Var leaf(Tensor<T> value, bool requires_grad = false);
  /// Leaf flagged as a model weight. Relevance propagation treats matmul
  /// operands that are parameters as fixed weights.
  Var parameter(Tensor<T> value, bool requires_grad = false);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  /// x[N x D] + bias[D] broadcast over rows.
  Var add_row(Var x, Var bias);
  Var mul(Var a, Var b);
  Var scale(Var x, T factor);
  Var softmax_rows(Var x);
  Var gelu(Var x);
  Var layernorm(Var x, Var gamma, Var beta, T eps);
  /// [N x D] -> [1 x D] column means.
  Var mean_rows(Var x);
  Var slice_cols(Var x, std::size_t begin, std::size_t count);
  Var concat_cols(std::span<const Var> parts);
  /// Sum of all elements as a 1-element tensor.
  Var sum(Var x);
  Var tap(Var x, const std::function<void(Tensor<T>&)>& edit = {});
  Var straight_through(Var x, Tensor<T> replacement);

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Node<T>& node(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradients of sum(seed * out) for every node that requires grad.
  Gradients<T> backward(Var out, const Tensor<T>& seed) const;
  /// Same with an all-ones seed.
  Gradients<T> backward(Var out) const;

 private:
  Var push(Node<T> n);
  Node<T>& mut(Var v) { return nodes_.at(v.id); }
  bool any_requires_grad(std::span<const Var> in) const;

  std::vector<Node<T>> nodes_;
};

// Elementwise reference functions shared by graph ops and tests.
template <typename T>
T gelu_value(T x) noexcept;
template <typename T>
T gelu_derivative(T x) noexcept;

extern template class Graph<float>;
extern template class Graph<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace mixq::ad
