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
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mixq/autodiff.hpp"
#include "mixq/model.hpp"

namespace mixq::lrp {

/// Bookkeeping for one propagation step (one graph node).
struct StepRecord {
  ad::Var node;
  ad::Op op = ad::Op::Leaf;
  double incoming = 0;     // relevance held by output units that redistribute
  double distributed = 0;  // relevance handed to the node's inputs
  double dropped = 0;      // relevance of units with an empty positive subset
  std::size_t dropped_units = 0;
};

template <typename T>
struct RelevanceState {
  std::size_t target_class = 0;
  std::vector<std::optional<Tensor<T>>> relevance;  // indexed by node id
  std::vector<StepRecord> steps;                    // reverse creation order

  bool has(ad::Var v) const { return v.id < relevance.size() && relevance[v.id].has_value(); }
  const Tensor<T>& operator[](ad::Var v) const;
};

/// Backward relevance pass over a recorded trace, seeded with the one-hot
/// vector of `target_class` at the logits.
///
/// Matmul nodes (and mean pooling) follow the positive-subset rule: output
/// unit i hands R_i to the terms x_j w_ji > 0 in proportion to their size, and
/// is dropped when no term is positive. When one operand is a weight the
/// activation receives everything; two activation operands share it equally.
/// Additions split by |operand value|; bias additions, LayerNorm, GELU,
/// softmax, scaling and quantization nodes pass relevance through unchanged.
template <typename T>
RelevanceState<T> propagate_relevance(const model::Trace<T>& trace, std::size_t target_class);

/// Traces `image` on the full-precision model and propagates from `target_class`.
template <typename T>
RelevanceState<T> propagate_relevance(const model::ToyViT<T>& model, const Tensor<T>& image, std::size_t target_class);

/// S = mean over heads of max(grad * R, 0). One tensor per head; a site
/// without a head axis passes a single tensor.
template <typename T>
Tensor<T> relevance_map(std::span<const Tensor<T>> grads, std::span<const Tensor<T>> relevance);

struct ContributionTable {
  std::map<model::LayerId, double> scores;  // C >= 0 per quantizable layer
  std::size_t samples = 0;
};

struct ImportanceTable {
  std::map<model::LayerId, double> omega;
};

/// Per-sample contribution mean(S) of every registered layer, using the
/// output of the layer as its activation. Classes come from the model's own
/// prediction for each image.
template <typename T>
ContributionTable contribution_scores(const model::ToyViT<T>& model, const Tensor<T>& images);

/// Omega = C / sum(C). Throws NumericError when every contribution is zero.
ImportanceTable importance_scores(const ContributionTable& table);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace mixq::lrp
