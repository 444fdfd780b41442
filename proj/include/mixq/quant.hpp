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
#include <span>
#include <string>
#include <vector>

#include "mixq/tensor.hpp"

namespace mixq::quant {

enum class Kind {
  Identity,  // pass-through; the "infinite-bit" quantizer
  UniformAffine,
  LogBase,
};

enum class Granularity { PerTensor, PerChannel };

const char* kind_name(Kind k) noexcept;
const char* granularity_name(Granularity g) noexcept;
Kind kind_from_name(const std::string& s);
Granularity granularity_from_name(const std::string& s);

struct QuantScheme {
  Kind kind = Kind::UniformAffine;
  Granularity granularity = Granularity::PerTensor;
  double base = 2.0;  // LogBase only, must exceed 1

  bool operator==(const QuantScheme&) const = default;
};

/// Parameters of one quantization site. Channels run along the last tensor
/// axis; a per-tensor quantizer carries exactly one scale/zero entry.
struct QuantParams {
  QuantScheme scheme;
  int bits = 8;
  std::vector<double> scale{1.0};
  std::vector<double> zero_point{0.0};  // integer-valued
  double offset = 0.0;                  // LogBase shift c for signed inputs
  std::vector<std::uint8_t> degenerate;  // per channel: range collapsed, s forced to 1

  static QuantParams identity();

  std::size_t channels() const noexcept { return scale.size(); }
  double qmax() const noexcept { return static_cast<double>((std::uint64_t{1} << bits) - 1); }
  bool is_identity() const noexcept { return scheme.kind == Kind::Identity; }
  std::size_t degenerate_count() const noexcept;

  bool operator==(const QuantParams&) const = default;
};

/// Throws ConfigError when the record violates its invariants.
void validate(const QuantParams& p);

/// Running per-channel min/max with optional sample retention for quantiles.
/// A stats object with one channel pools every element of the observed tensors.
class CalibrationStats {
 public:
  CalibrationStats() = default;
  /// sample_cap == 0 keeps every sample; otherwise the buffer is decimated
  /// deterministically (every other element, doubling the stride) once it
  /// reaches twice the cap.
  explicit CalibrationStats(std::size_t channels, bool keep_samples = false, std::size_t sample_cap = 0);

  static CalibrationStats from_range(std::vector<double> mins, std::vector<double> maxs);
  static CalibrationStats from_samples(std::span<const double> values);

  template <typename T>
  void observe(const Tensor<T>& x);
  void observe_value(std::size_t channel, double v);

  std::size_t channels() const noexcept { return min_.size(); }
  double min(std::size_t c) const { return min_.at(c); }
  double max(std::size_t c) const { return max_.at(c); }
  const std::vector<double>& mins() const noexcept { return min_; }
  const std::vector<double>& maxs() const noexcept { return max_; }
  bool keeps_samples() const noexcept { return keep_samples_; }
  std::size_t sample_cap() const noexcept { return cap_; }
  std::span<const double> samples(std::size_t c) const { return samples_.at(c); }
  std::vector<double> pooled_samples() const;
  bool observed() const noexcept { return count_ > 0; }
  std::uint64_t count() const noexcept { return count_; }

  /// Linear-interpolated quantile of channel c. p = 1 and p = 0 use the exact
  /// running extrema and never need retained samples.
  double quantile(std::size_t c, double p) const;
  /// Quantile over all channels pooled.
  double pooled_quantile(double p) const;

  /// Rebuild from serialized parts.
  static CalibrationStats restore(std::vector<double> mins, std::vector<double> maxs,
                                  std::vector<std::vector<double>> samples, bool keep_samples, std::size_t cap,
                                  std::uint64_t count);

 private:
  void push_sample(std::size_t c, double v);

  std::vector<double> min_, max_;
  bool keep_samples_ = false;
  std::size_t cap_ = 0;
  std::vector<std::vector<double>> samples_;
  std::vector<std::size_t> stride_, skip_;
  std::uint64_t count_ = 0;
};

/// Round half away from zero, the rounding used by every quantizer here.
double round_half_away(double x) noexcept;

/// Uniform affine calibration over the [1-p, p] quantile range.
QuantParams calibrate_uniform(const CalibrationStats& stats, int bits, Granularity granularity,
                              double percentile = 1.0);
/// Convenience: weight calibration with one channel per column.
template <typename T>
QuantParams calibrate_uniform_tensor(const Tensor<T>& x, int bits, Granularity granularity);

template <typename T>
Tensor<std::int32_t> quantize_uniform(const Tensor<T>& x, const QuantParams& params);
template <typename T>
Tensor<T> dequantize_uniform(const Tensor<std::int32_t>& codes, const QuantParams& params);

/// Log-domain calibration: c = -min + delta for signed data (0 otherwise),
/// s = max + c, so that (x + c) / s lies in (0, 1].
QuantParams calibrate_log(const CalibrationStats& stats, int bits, double base);

template <typename T>
Tensor<std::int32_t> quantize_log(const Tensor<T>& x, const QuantParams& params);
template <typename T>
Tensor<T> dequantize_log(const Tensor<std::int32_t>& codes, const QuantParams& params);

/// Dequantized value of log code k: s * a^-k - c.
double log_level(const QuantParams& params, std::int64_t k) noexcept;

inline constexpr double kLogOffsetFloor = 1e-8;

/// Base in `grid` with the smallest mean squared fake-quant error on samples.
/// Ties go to the larger base.
double search_adaptive_base(std::span<const double> samples, int bits, std::span<const double> grid);
/// Same search with the calibration range taken from `stats` (so retained
/// samples may be a decimated subset).
double search_adaptive_base(const CalibrationStats& stats, std::span<const double> samples, int bits,
                            std::span<const double> grid);
std::vector<double> default_base_grid();

/// dequantize(quantize(x)); identity for Kind::Identity.
template <typename T>
Tensor<T> fake_quant(const Tensor<T>& x, const QuantParams& params);
template <typename T>
void fake_quant_inplace(Tensor<T>& x, const QuantParams& params);

}  // namespace mixq::quant
