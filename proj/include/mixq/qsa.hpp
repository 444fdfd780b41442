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

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mixq/model.hpp"
#include "mixq/ptq.hpp"

namespace mixq::qsa {

enum class LossKind { CrossEntropy, KLvsFullPrecision };

const char* loss_kind_name(LossKind k) noexcept;
LossKind loss_kind_from_name(const std::string& s);

struct SweepConfig {
  int baseline_bits = 4;
  std::vector<int> candidates{2, 3, 4, 5, 6};
  LossKind loss = LossKind::CrossEntropy;

  /// Candidates sorted, unique, within [1, 8] and containing the baseline.
  void validate() const;
};

/// Labeled evaluation batch plus the full-precision reference logits used by
/// the KL loss.
template <typename T>
struct EvalSet {
  Tensor<T> images;                 // [B x H x W x ch]
  std::vector<std::int32_t> labels;  // B entries
  Tensor<T> fp_logits;              // [B x C], may be empty for cross-entropy
};

struct LossAccuracy {
  double loss = 0;
  double accuracy = 0;
};

/// Mean cross-entropy against labels, or mean KL(fp || quantized).
template <typename T>
LossAccuracy score_logits(const Tensor<T>& logits, const EvalSet<T>& data, LossKind kind);

template <typename T>
LossAccuracy evaluate(const ptq::QuantizedModel<T>& qm, const EvalSet<T>& data, LossKind kind);

/// Every registry layer at the baseline bits.
template <typename T>
LossAccuracy baseline_loss(const model::ToyViT<T>& fp, const ptq::CalibrationSet& calib, const EvalSet<T>& data,
                           const SweepConfig& sweep, const ptq::PtqOptions& options);

/// Layers of `kind` (in every block) at `bits`, everything else at the baseline.
template <typename T>
LossAccuracy perturbed_loss(const model::ToyViT<T>& fp, const ptq::CalibrationSet& calib, const EvalSet<T>& data,
                            const SweepConfig& sweep, const ptq::PtqOptions& options, model::LayerKind kind, int bits);

using KindBit = std::pair<model::LayerKind, int>;

struct SensitivityTable {
  std::map<KindBit, double> lambda;
  std::map<KindBit, double> delta;           // raw loss deltas
  std::map<KindBit, double> accuracy_delta;  // perturbed minus baseline accuracy
  double baseline_loss = 0;
  double baseline_accuracy = 0;
  bool uniform_fallback = false;  // every shifted delta was zero
};

/// delta+ = delta - min(delta), lambda = delta+ / sum(delta+); uniform when the sum is zero.
SensitivityTable sensitivity_scores(const std::map<KindBit, double>& deltas);

/// Full sweep over every quantizable kind and candidate bit.
template <typename T>
SensitivityTable sweep(const model::ToyViT<T>& fp, const ptq::CalibrationSet& calib, const EvalSet<T>& data,
                       const SweepConfig& sweep, const ptq::PtqOptions& options);

}  // namespace mixq::qsa
