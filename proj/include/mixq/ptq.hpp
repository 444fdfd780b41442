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

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mixq/crl.hpp"
#include "mixq/model.hpp"
#include "mixq/quant.hpp"

namespace mixq::ptq {

/// Activation calibration sites: the pre-quantization operand of a layer
/// (input / input_b) or a LayerNorm output.
using SiteKey = std::pair<model::LayerId, model::TapPoint>;

std::string site_key_name(const SiteKey& key);
SiteKey site_key_from_name(const std::string& s);

struct PtqOptions {
  bool crl = true;
  crl::ClipPolicy clip;
  double ln_percentile = 1.0;
  /// Post-LayerNorm activation granularity when CRL is off.
  quant::Granularity ln_granularity = quant::Granularity::PerTensor;
  bool log_post_softmax = true;
  bool log_post_gelu = true;
  bool adaptive_base = true;
  double fixed_base = 2.0;
  std::vector<double> base_grid = quant::default_base_grid();
  std::size_t sample_cap = 4096;

  void validate() const;
};

/// Activation statistics for every site, gathered from full-precision runs.
struct CalibrationSet {
  std::map<SiteKey, quant::CalibrationStats> stats;
  std::size_t images = 0;

  const quant::CalibrationStats& at(const SiteKey& key) const;
  void save(const std::filesystem::path& dir, const std::string& stem) const;
  static CalibrationSet load(const std::filesystem::path& dir, const std::string& stem);
};

template <typename T>
CalibrationSet collect_calibration(const model::ToyViT<T>& model, const Tensor<T>& images, const PtqOptions& options);

/// One bit-width per registry layer, shared by its weights and activations.
using BitMap = std::map<model::LayerId, int>;

BitMap uniform_bits(const model::ModelConfig& config, int bits);

template <typename T>
struct QuantizedModel {
  model::ToyViT<T> model;  // CRL-folded when enabled, weights still full precision
  model::QuantPlan plan;
  std::vector<crl::ReparamRecord> records;
};

/// Builds the quantizer for every registry layer at the bit-width given in
/// `bits` (layers missing from the map stay full precision).
template <typename T>
QuantizedModel<T> build_quantized(const model::ToyViT<T>& fp, const CalibrationSet& calib, const BitMap& bits,
                                  const PtqOptions& options);

}  // namespace mixq::ptq
