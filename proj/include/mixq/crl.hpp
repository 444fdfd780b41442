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

#include <limits>
#include <map>
#include <span>
#include <vector>

#include "mixq/model.hpp"
#include "mixq/quant.hpp"

namespace mixq::crl {

struct ClipPolicy {
  double k = 2.0;  // band half-width in population standard deviations; +inf disables clipping
  void validate() const;
};

/// Clipped scale and zero-point with the variation factors v1 = s / s_hat and
/// v2 = z - z_hat. z_hat stays real valued.
struct ClipResult {
  std::vector<double> s_hat, z_hat, v1, v2;
  double mu_s = 0, sigma_s = 0, mu_z = 0, sigma_z = 0;
  double s_lo = 0, s_hi = 0, z_lo = 0, z_hi = 0;  // bands actually applied
  std::size_t s_clipped_low = 0, s_clipped_high = 0, z_clipped_low = 0, z_clipped_high = 0;
};

ClipResult clip_channel_params(std::span<const double> s, std::span<const double> z, const ClipPolicy& policy);

/// gamma_hat = gamma / v1, beta_hat = (beta + s * v2) / v1.
template <typename T>
model::Norm<T> fold_into_layernorm(const model::Norm<T>& ln, std::span<const double> s, std::span<const double> v1,
                                   std::span<const double> v2);

/// W_hat = diag(v1) W, b_hat = b - (s * v2) W, with W stored [in x out].
template <typename T>
model::Linear<T> fold_into_next_linear(const model::Linear<T>& lin, std::span<const double> s,
                                       std::span<const double> v1, std::span<const double> v2);

struct ReparamRecord {
  model::LayerId norm;  // LN1 or LN2 of a block
  model::LayerId next;  // QKV or FC1 of the same block
  int bits = 0;
  std::vector<double> s, z;
  ClipResult clip;
  std::vector<double> gamma_hat, beta_hat, bias_hat;
};

template <typename T>
struct CrlResult {
  model::ToyViT<T> model;
  std::vector<ReparamRecord> records;                   // block order, LN1 before LN2
  std::map<model::LayerId, quant::QuantParams> inputs;  // per-channel (s_hat, round(z_hat)) for QKV / FC1
};

/// Channel-wise calibration of every LayerNorm output, clipping, and folding
/// into the LayerNorm affine terms and the following linear layer.
/// `ln_stats` is keyed by LN1/LN2 layer ids; `bits` by the QKV/FC1 ids that
/// consume them. The input model is left untouched.
template <typename T>
CrlResult<T> apply_crl(const model::ToyViT<T>& model, const std::map<model::LayerId, quant::CalibrationStats>& ln_stats,
                       const ClipPolicy& policy, const std::map<model::LayerId, int>& bits, double percentile = 1.0);

}  // namespace mixq::crl
