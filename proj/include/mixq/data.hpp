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
#include <filesystem>
#include <string>
#include <vector>

#include "mixq/model.hpp"
#include "mixq/tensor.hpp"

namespace mixq::data {

template <typename T>
struct Dataset {
  Tensor<T> images;                  // [B x H x W x ch]
  std::vector<std::int32_t> labels;  // B entries

  std::size_t size() const noexcept { return labels.size(); }
  Dataset subset(const std::vector<std::size_t>& indices) const;
  template <typename U>
  Dataset<U> cast() const;
};

struct SynthConfig {
  std::size_t train = 1536;
  std::size_t eval = 512;
  int blobs = 3;         // Gaussian blobs per class prototype
  double jitter = 1.0;   // blob centre jitter in pixels
  double noise = 0.35;   // additive pixel noise
  void validate() const;
};

struct Splits {
  Dataset<double> train;
  Dataset<double> eval;
};

/// Class-conditional Gaussian-blob images. Classes are balanced and
/// interleaved; the same seed gives bitwise identical splits.
Splits synthesize(const model::ModelConfig& model, const SynthConfig& config, std::uint64_t seed);

/// `count` distinct indices out of [0, n), seeded.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, std::uint64_t seed);

void save_splits(const Splits& s, const std::filesystem::path& dir, const std::string& stem);
Splits load_splits(const std::filesystem::path& dir, const std::string& stem);

struct TrainConfig {
  int epochs = 4;
  std::size_t batch = 32;
  double lr = 2e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  void validate() const;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

/// Full-batch-order Adam on mean cross-entropy; the shuffle is seeded, so
/// training is deterministic.
template <typename T>
TrainLog train(model::ToyViT<T>& model, const Dataset<T>& data, const TrainConfig& config, std::uint64_t seed);

template <typename T>
double accuracy(const model::ToyViT<T>& model, const Dataset<T>& data);

}  // namespace mixq::data
