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

#include "mixq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mixq/kernels/kernels.hpp"

namespace mixq::quant {

const char* kind_name(Kind k) noexcept {
  switch (k) {
    case Kind::Identity: return "identity";
    case Kind::UniformAffine: return "uniform";
    case Kind::LogBase: return "log";
  }
  return "?";
}

const char* granularity_name(Granularity g) noexcept {
  return g == Granularity::PerChannel ? "per_channel" : "per_tensor";
}

Kind kind_from_name(const std::string& s) {
  if (s == "identity") return Kind::Identity;
  if (s == "uniform") return Kind::UniformAffine;
  if (s == "log") return Kind::LogBase;
  throw ConfigError("unknown quantizer kind '" + s + "'");
}

Granularity granularity_from_name(const std::string& s) {
  if (s == "per_tensor") return Granularity::PerTensor;
  if (s == "per_channel") return Granularity::PerChannel;
  throw ConfigError("unknown granularity '" + s + "'");
}

QuantParams QuantParams::identity() {
  QuantParams p;
  p.scheme.kind = Kind::Identity;
  p.bits = 0;
  return p;
}

std::size_t QuantParams::degenerate_count() const noexcept {
  return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), std::uint8_t{1}));
}

void validate(const QuantParams& p) {
  if (p.is_identity()) return;
  if (p.bits < 1 || p.bits > 8) throw ConfigError("quantizer bits must lie in [1, 8], got " + std::to_string(p.bits));
  if (p.scale.empty() || p.scale.size() != p.zero_point.size()) throw ConfigError("scale/zero-point size mismatch");
  for (double s : p.scale)
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("quantizer scale must be positive and finite");
  for (double z : p.zero_point)
    if (z < 0.0 || z > p.qmax() || z != std::round(z)) throw ConfigError("zero-point outside code range");
  if (p.scheme.kind == Kind::LogBase) {
    if (!(p.scheme.base > 1.0)) throw ConfigError("log quantizer base must exceed 1");
    if (!(p.offset >= 0.0)) throw ConfigError("log quantizer offset must be non-negative");
  }
}

double round_half_away(double x) noexcept { return std::round(x); }

// ---------------------------------------------------------------------------
// CalibrationStats

CalibrationStats::CalibrationStats(std::size_t channels, bool keep_samples, std::size_t sample_cap)
    : min_(channels, std::numeric_limits<double>::infinity()),
      max_(channels, -std::numeric_limits<double>::infinity()),
      keep_samples_(keep_samples),
      cap_(sample_cap),
      samples_(keep_samples ? channels : 0),
      stride_(keep_samples ? channels : 0, 1),
      skip_(keep_samples ? channels : 0, 0) {
  if (channels == 0) throw DimensionError("calibration stats need at least one channel");
}

CalibrationStats CalibrationStats::from_range(std::vector<double> mins, std::vector<double> maxs) {
  if (mins.size() != maxs.size()) throw DimensionError("from_range: min/max size mismatch");
  CalibrationStats s(mins.size());
  for (std::size_t c = 0; c < mins.size(); ++c) {
    if (mins[c] > maxs[c]) throw ConfigError("from_range: min exceeds max");
  }
  s.min_ = std::move(mins);
  s.max_ = std::move(maxs);
  s.count_ = 1;
  return s;
}

CalibrationStats CalibrationStats::from_samples(std::span<const double> values) {
  CalibrationStats s(1, true);
  for (double v : values) s.observe_value(0, v);
  return s;
}

CalibrationStats CalibrationStats::restore(std::vector<double> mins, std::vector<double> maxs,
                                           std::vector<std::vector<double>> samples, bool keep_samples,
                                           std::size_t cap, std::uint64_t count) {
  CalibrationStats s(mins.size(), keep_samples, cap);
  if (maxs.size() != mins.size()) throw DimensionError("restore: min/max size mismatch");
  s.min_ = std::move(mins);
  s.max_ = std::move(maxs);
  if (keep_samples) {
    if (samples.size() != s.min_.size()) throw DimensionError("restore: sample channel mismatch");
    s.samples_ = std::move(samples);
  }
  s.count_ = count;
  return s;
}

void CalibrationStats::push_sample(std::size_t c, double v) {
  if (cap_ != 0) {
    if (skip_[c] > 0) {
      --skip_[c];
      return;
    }
    skip_[c] = stride_[c] - 1;
  }
  auto& buf = samples_[c];
  buf.push_back(v);
  if (cap_ != 0 && buf.size() >= 2 * cap_) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < buf.size(); r += 2) buf[w++] = buf[r];
    buf.resize(w);
    stride_[c] *= 2;
    skip_[c] = stride_[c] - 1;
  }
}

void CalibrationStats::observe_value(std::size_t c, double v) {
  min_.at(c) = std::min(min_[c], v);
  max_[c] = std::max(max_[c], v);
  if (keep_samples_) push_sample(c, v);
  ++count_;
}

template <typename T>
void CalibrationStats::observe(const Tensor<T>& x) {
  const std::size_t ch = channels();
  if (ch == 1) {
    for (T v : x.data()) observe_value(0, static_cast<double>(v));
    return;
  }
  if (x.cols() != ch) {
    throw DimensionError("calibration stats expect " + std::to_string(ch) + " channels, got " +
                         shape_to_string(x.shape()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) observe_value(i % ch, static_cast<double>(x[i]));
}

namespace {

double sorted_quantile(std::vector<double> v, double p) {
  if (v.empty()) throw ConfigError("quantile requested but no calibration samples were retained");
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

void check_percentile(double p) {
  if (!(p > 0.5 && p <= 1.0)) throw ConfigError("percentile must lie in (0.5, 1], got " + std::to_string(p));
}

}  // namespace

std::vector<double> CalibrationStats::pooled_samples() const {
  std::vector<double> all;
  for (const auto& s : samples_) all.insert(all.end(), s.begin(), s.end());
  return all;
}

double CalibrationStats::quantile(std::size_t c, double p) const {
  if (p >= 1.0) return max_.at(c);
  if (p <= 0.0) return min_.at(c);
  if (!keep_samples_) throw ConfigError("quantile requested but no calibration samples were retained");
  return sorted_quantile(samples_.at(c), p);
}

double CalibrationStats::pooled_quantile(double p) const {
  if (p >= 1.0) return *std::max_element(max_.begin(), max_.end());
  if (p <= 0.0) return *std::min_element(min_.begin(), min_.end());
  if (!keep_samples_) throw ConfigError("quantile requested but no calibration samples were retained");
  return sorted_quantile(pooled_samples(), p);
}

template void CalibrationStats::observe(const Tensor<float>&);
template void CalibrationStats::observe(const Tensor<double>&);

// ---------------------------------------------------------------------------
// Uniform affine

namespace {

void uniform_channel(double lo, double hi, int bits, double& s, double& z, std::uint8_t& flag) {
  const double qmax = static_cast<double>((std::uint64_t{1} << bits) - 1);
  if (!(hi > lo)) {
    s = 1.0;
    z = 0.0;
    flag = 1;
    return;
  }
  s = (hi - lo) / qmax;
  z = std::clamp(round_half_away(-lo / s), 0.0, qmax) + 0.0;  // + 0.0 folds -0 into +0
  flag = 0;
}

template <typename T>
struct ExpandedParams {
  std::vector<T> scale, zero;
};

template <typename T>
ExpandedParams<T> expand(const QuantParams& p, std::size_t cols) {
  ExpandedParams<T> e;
  if (p.channels() == 1) {
    e.scale.assign(cols, static_cast<T>(p.scale[0]));
    e.zero.assign(cols, static_cast<T>(p.zero_point[0]));
  } else {
    if (p.channels() != cols) {
      throw DimensionError("quantizer has " + std::to_string(p.channels()) + " channels, tensor has " +
                           std::to_string(cols) + " columns");
    }
    e.scale.reserve(cols);
    e.zero.reserve(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      e.scale.push_back(static_cast<T>(p.scale[j]));
      e.zero.push_back(static_cast<T>(p.zero_point[j]));
    }
  }
  return e;
}

void require_kind(const QuantParams& p, Kind k, const char* op) {
  if (p.scheme.kind != k) {
    throw ConfigError(std::string(op) + " called with a " + kind_name(p.scheme.kind) + " quantizer");
  }
}

}  // namespace

QuantParams calibrate_uniform(const CalibrationStats& stats, int bits, Granularity granularity, double percentile) {
  if (bits < 1 || bits > 8) throw ConfigError("quantizer bits must lie in [1, 8], got " + std::to_string(bits));
  check_percentile(percentile);
  if (!stats.observed()) throw ConfigError("calibration stats are empty");
  QuantParams p;
  p.scheme = {Kind::UniformAffine, granularity, 2.0};
  p.bits = bits;
  if (granularity == Granularity::PerTensor || stats.channels() == 1) {
    p.scale.assign(1, 1.0);
    p.zero_point.assign(1, 0.0);
    p.degenerate.assign(1, 0);
    const double lo = stats.pooled_quantile(1.0 - percentile);
    const double hi = stats.pooled_quantile(percentile);
    uniform_channel(lo, hi, bits, p.scale[0], p.zero_point[0], p.degenerate[0]);
    return p;
  }
  const std::size_t ch = stats.channels();
  p.scale.assign(ch, 1.0);
  p.zero_point.assign(ch, 0.0);
  p.degenerate.assign(ch, 0);
  for (std::size_t c = 0; c < ch; ++c) {
    const double lo = stats.quantile(c, 1.0 - percentile);
    const double hi = stats.quantile(c, percentile);
    uniform_channel(lo, hi, bits, p.scale[c], p.zero_point[c], p.degenerate[c]);
  }
  return p;
}

template <typename T>
QuantParams calibrate_uniform_tensor(const Tensor<T>& x, int bits, Granularity granularity) {
  CalibrationStats stats(granularity == Granularity::PerChannel ? x.cols() : 1);
  stats.observe(x);
  return calibrate_uniform(stats, bits, granularity, 1.0);
}

template <typename T>
Tensor<std::int32_t> quantize_uniform(const Tensor<T>& x, const QuantParams& params) {
  require_kind(params, Kind::UniformAffine, "quantize_uniform");
  const std::size_t cols = std::max<std::size_t>(x.cols(), 1);
  const auto e = expand<T>(params, cols);
  Tensor<T> codes(x.shape());
  kernels::quantize_uniform(x.ptr(), codes.ptr(), x.rows(), cols, e.scale.data(), e.zero.data(),
                            static_cast<T>(params.qmax()));
  std::vector<std::int32_t> out(codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int32_t>(codes[i]);
  return Tensor<std::int32_t>(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> dequantize_uniform(const Tensor<std::int32_t>& codes, const QuantParams& params) {
  require_kind(params, Kind::UniformAffine, "dequantize_uniform");
  const std::size_t cols = std::max<std::size_t>(codes.cols(), 1);
  const auto e = expand<T>(params, cols);
  Tensor<T> out(codes.shape());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const std::size_t j = i % cols;
    out[i] = e.scale[j] * (static_cast<T>(codes[i]) - e.zero[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Logarithmic

QuantParams calibrate_log(const CalibrationStats& stats, int bits, double base) {
  if (bits < 1 || bits > 8) throw ConfigError("quantizer bits must lie in [1, 8], got " + std::to_string(bits));
  if (!(base > 1.0)) throw ConfigError("log quantizer base must exceed 1");
  if (!stats.observed()) throw ConfigError("calibration stats are empty");
  QuantParams p;
  p.scheme = {Kind::LogBase, Granularity::PerTensor, base};
  p.bits = bits;
  p.zero_point = {0.0};
  p.degenerate = {0};
  const double lo = stats.pooled_quantile(0.0);
  const double hi = stats.pooled_quantile(1.0);
  p.offset = lo < 0.0 ? -lo + kLogOffsetFloor : 0.0;
  const double s = hi + p.offset;
  if (!(s > 0.0) || (lo == 0.0 && hi == 0.0)) {
    p.scale = {1.0};
    p.degenerate = {1};
  } else {
    p.scale = {s};
  }
  return p;
}

namespace {

std::int32_t log_code(double x, double s, double c, double log2_base, double qmax) {
  const double u = (x + c) / s;
  if (!(u > 0.0)) return static_cast<std::int32_t>(qmax);
  const double q = round_half_away(-std::log2(u) / log2_base);
  return static_cast<std::int32_t>(std::clamp(q, 0.0, qmax));
}

// Every reachable dequantized level, indexed by code.
std::vector<double> log_levels(const QuantParams& p) {
  std::vector<double> t(static_cast<std::size_t>(p.qmax()) + 1);
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = log_level(p, static_cast<std::int64_t>(k));
  return t;
}

}  // namespace

double log_level(const QuantParams& params, std::int64_t k) noexcept {
  return params.scale[0] * std::pow(params.scheme.base, -static_cast<double>(k)) - params.offset;
}

template <typename T>
Tensor<std::int32_t> quantize_log(const Tensor<T>& x, const QuantParams& params) {
  require_kind(params, Kind::LogBase, "quantize_log");
  const double s = params.scale[0], c = params.offset, lb = std::log2(params.scheme.base), qmax = params.qmax();
  std::vector<std::int32_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = log_code(static_cast<double>(x[i]), s, c, lb, qmax);
  return Tensor<std::int32_t>(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> dequantize_log(const Tensor<std::int32_t>& codes, const QuantParams& params) {
  require_kind(params, Kind::LogBase, "dequantize_log");
  Tensor<T> out(codes.shape());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<T>(log_level(params, codes[i]));
  return out;
}

std::vector<double> default_base_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 20; ++k) grid.push_back(1.0 + 0.05 * k);
  grid.push_back(std::numbers::sqrt2);
  std::sort(grid.begin(), grid.end());
  return grid;
}

double search_adaptive_base(std::span<const double> samples, int bits, std::span<const double> grid) {
  if (samples.empty()) throw ConfigError("adaptive base search needs samples");
  const auto stats = CalibrationStats::from_range({*std::min_element(samples.begin(), samples.end())},
                                                  {*std::max_element(samples.begin(), samples.end())});
  return search_adaptive_base(stats, samples, bits, grid);
}

double search_adaptive_base(const CalibrationStats& stats, std::span<const double> samples, int bits,
                            std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("adaptive base search needs a non-empty grid");
  if (samples.empty()) throw ConfigError("adaptive base search needs samples");
  double best_base = 0.0;
  double best_err = std::numeric_limits<double>::infinity();
  for (double a : grid) {
    if (!(a > 1.0)) throw ConfigError("adaptive base grid entries must exceed 1");
    const QuantParams p = calibrate_log(stats, bits, a);
    const double s = p.scale[0], c = p.offset, lb = std::log2(a), qmax = p.qmax();
    const auto levels = log_levels(p);
    double err = 0.0;
    for (double x : samples) {
      const double d = x - levels[static_cast<std::size_t>(log_code(x, s, c, lb, qmax))];
      err += d * d;
    }
    err /= static_cast<double>(samples.size());
    if (err < best_err || (err == best_err && a > best_base)) {
      best_err = err;
      best_base = a;
    }
  }
  return best_base;
}

// ---------------------------------------------------------------------------

template <typename T>
void fake_quant_inplace(Tensor<T>& x, const QuantParams& params) {
  switch (params.scheme.kind) {
    case Kind::Identity:
      return;
    case Kind::UniformAffine: {
      const std::size_t cols = std::max<std::size_t>(x.cols(), 1);
      const auto e = expand<T>(params, cols);
      kernels::fake_quant_uniform(x.ptr(), x.ptr(), x.rows(), cols, e.scale.data(), e.zero.data(),
                                  static_cast<T>(params.qmax()));
      return;
    }
    case Kind::LogBase: {
      const double s = params.scale[0], c = params.offset, lb = std::log2(params.scheme.base), qmax = params.qmax();
      const auto levels = log_levels(params);
      for (auto& v : x.data()) v = static_cast<T>(levels[static_cast<std::size_t>(log_code(static_cast<double>(v), s, c, lb, qmax))]);
      return;
    }
  }
}

template <typename T>
Tensor<T> fake_quant(const Tensor<T>& x, const QuantParams& params) {
  Tensor<T> out(x);
  fake_quant_inplace(out, params);
  return out;
}

#define MIXQ_INSTANTIATE(T)                                                                     \
  template QuantParams calibrate_uniform_tensor(const Tensor<T>&, int, Granularity);            \
  template Tensor<std::int32_t> quantize_uniform(const Tensor<T>&, const QuantParams&);         \
  template Tensor<T> dequantize_uniform(const Tensor<std::int32_t>&, const QuantParams&);       \
  template Tensor<std::int32_t> quantize_log(const Tensor<T>&, const QuantParams&);             \
  template Tensor<T> dequantize_log(const Tensor<std::int32_t>&, const QuantParams&);           \
  template Tensor<T> fake_quant(const Tensor<T>&, const QuantParams&);                          \
  template void fake_quant_inplace(Tensor<T>&, const QuantParams&);

MIXQ_INSTANTIATE(float)
MIXQ_INSTANTIATE(double)
#undef MIXQ_INSTANTIATE

}  // namespace mixq::quant
