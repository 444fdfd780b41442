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
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixq/allocator.hpp"
#include "mixq/data.hpp"
#include "mixq/model.hpp"
#include "mixq/ptq.hpp"
#include "mixq/qsa.hpp"

namespace mixq::pipeline {

using json = nlohmann::json;

/// Everything a run depends on. Serialized as JSON; see docs/config.md.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string precision = "float";  // "float" runtime mode or "double" verification mode
  model::ModelConfig model;
  std::string dataset_source = "synthetic";  // or "directory"
  std::string dataset_path;                  // directory holding dataset.json / dataset.bin
  data::SynthConfig synth;
  data::TrainConfig train;
  std::size_t calib_samples = 32;
  ptq::PtqOptions ptq;
  std::size_t lrp_samples = 256;
  qsa::SweepConfig sweep;
  std::size_t qsa_samples = 256;
  std::vector<int> alloc_bits{2, 3, 4, 5, 6};
  int fixed_bits = 4;
  double budget_scale = 1.0;  // both budgets = scale * fixed-bit reference cost
  std::map<std::string, int> pins;  // layer name -> bits
  alloc::Orientation orientation = alloc::Orientation::Verbatim;

  void validate() const;
  json to_json() const;
  /// Unknown keys are rejected so typos surface as configuration errors.
  static RunConfig from_json(const json& j);
  static RunConfig load(const std::filesystem::path& path);
  /// FNV-1a of the canonical JSON rendering.
  std::string hash() const;
};

enum class Stage { SynthData, Calibrate, Importance, Sensitivity, Allocate, Quantize, Eval, Report };
enum class Ablation { OmegaLambda, OmegaOnly };

const char* stage_name(Stage s) noexcept;
Stage stage_from_name(const std::string& s);
const char* ablation_name(Ablation a) noexcept;
Ablation ablation_from_name(const std::string& s);
inline constexpr Stage kAllStages[] = {Stage::SynthData, Stage::Calibrate, Stage::Importance, Stage::Sensitivity,
                                       Stage::Allocate,  Stage::Quantize,  Stage::Eval,       Stage::Report};

struct RunContext {
  RunConfig config;
  std::filesystem::path out = "out";
  std::filesystem::path cache;  // stage artifacts; defaults to `out`
  Ablation ablation = Ablation::OmegaLambda;

  std::filesystem::path artifacts() const { return cache.empty() ? out : cache; }
};

/// Runs one stage, reading its predecessors' artifacts from the cache and
/// writing its own. Throws MissingArtifactError naming the stage to run when
/// an input is absent or was produced under a different config.
void run_stage(Stage stage, const RunContext& ctx);
void run_all(const RunContext& ctx);

/// Allocation instance of the registry with the given score tables.
alloc::AllocationInstance make_instance(const model::ModelConfig& mc, const std::map<model::LayerId, double>& omega,
                                        const std::map<qsa::KindBit, double>& lambda, const std::vector<int>& bits,
                                        const std::map<std::string, int>& pins, alloc::Orientation orientation);

/// Report with wall-clock fields removed, for determinism comparisons.
json strip_timings(json report);

}  // namespace mixq::pipeline
