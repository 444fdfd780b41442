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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mixq/quant.hpp"
#include "test_util.hpp"

namespace mixq::quant {
namespace {

using testing::random_tensor;

QuantParams uniform_from_range(double lo, double hi, int bits) {
  return calibrate_uniform(CalibrationStats::from_range({lo}, {hi}), bits, Granularity::PerTensor);
}

QuantParams log_params(double s, double c, double a, int bits) {
  QuantParams p;
  p.scheme = {Kind::LogBase, Granularity::PerTensor, a};
  p.bits = bits;
  p.scale = {s};
  p.zero_point = {0};
  p.offset = c;
  return p;
}

Tensor<double> vec(std::initializer_list<double> v) { return Tensor<double>(Shape{v.size()}, std::vector<double>(v)); }

TEST(Uniform, SymmetricRangeExample) {
  const auto p = uniform_from_range(-1, 1, 4);
  EXPECT_DOUBLE_EQ(p.scale[0], 2.0 / 15.0);
  EXPECT_EQ(p.zero_point[0], 8);  // round(7.5) = 8, half away from zero
  const auto codes = quantize_uniform(vec({0.0, 1.0}), p);
  EXPECT_EQ(codes[0], 8);
  EXPECT_EQ(codes[1], 15);  // clip(round(7.5) + 8)
  const auto back = dequantize_uniform<double>(codes, p);
  EXPECT_EQ(back[0], 0.0);
  EXPECT_NEAR(back[1], 14.0 / 15.0, 1e-15);
}

TEST(Uniform, IntegerLattice) {
  const auto p = uniform_from_range(0, 15, 4);
  EXPECT_EQ(p.scale[0], 1.0);
  EXPECT_EQ(p.zero_point[0], 0.0);
  EXPECT_EQ(quantize_uniform(vec({7.0}), p)[0], 7);
}

TEST(Uniform, LatticeFixedPointsAndClipping) {
  const auto p = uniform_from_range(-0.7, 1.3, 3);
  const double s = p.scale[0], z = p.zero_point[0];
  for (int k = 0; k <= 7; ++k) {
    const auto code = quantize_uniform(vec({s * (k - z)}), p)[0];
    EXPECT_EQ(code, k);
  }
  EXPECT_EQ(quantize_uniform(vec({-100.0}), p)[0], 0);
  EXPECT_EQ(quantize_uniform(vec({100.0}), p)[0], 7);
  Tensor<std::int32_t> zc(Shape{2}, std::vector<std::int32_t>{static_cast<int>(z), static_cast<int>(z) + 1});
  const auto d = dequantize_uniform<double>(zc, p);
  EXPECT_EQ(d[0], 0.0);
  EXPECT_DOUBLE_EQ(d[1], s);
}

TEST(Uniform, RoundTripBoundAndIdempotence) {
  for (int bits = 1; bits <= 8; ++bits) {
    const auto x = random_tensor<double>({4096}, 10 + bits, -2.5, 1.5);
    const auto p = calibrate_uniform_tensor(x, bits, Granularity::PerTensor);
    const auto y = fake_quant(x, p);
    const double lo = -p.scale[0] * p.zero_point[0], hi = p.scale[0] * (p.qmax() - p.zero_point[0]);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] < lo || x[i] > hi) continue;
      const double ulp = std::nextafter(std::abs(x[i]), INFINITY) - std::abs(x[i]);
      ASSERT_LE(std::abs(x[i] - y[i]), p.scale[0] / 2 + 4 * ulp) << bits;
    }
    EXPECT_EQ(fake_quant(y, p), y);
  }
}

TEST(Uniform, MonotoneCodes) {
  const auto p = uniform_from_range(-1, 3, 5);
  std::int32_t prev = -1;
  for (double x = -2; x <= 4; x += 0.001) {
    const auto c = quantize_uniform(vec({x}), p)[0];
    ASSERT_GE(c, prev);
    prev = c;
  }
}

TEST(Uniform, PerChannelEqualsPerTensorForSharedStats) {
  const auto stats = CalibrationStats::from_range({-0.5, -0.5, -0.5}, {2, 2, 2});
  const auto pc = calibrate_uniform(stats, 4, Granularity::PerChannel);
  const auto pt = calibrate_uniform(stats, 4, Granularity::PerTensor);
  const auto x = random_tensor<double>({16, 3}, 3, -1, 3);
  EXPECT_EQ(fake_quant(x, pc), fake_quant(x, pt));
}

TEST(Uniform, DegenerateChannelIsFlagged) {
  const auto p = calibrate_uniform(CalibrationStats::from_range({1.0, 0.0}, {1.0, 2.0}), 4, Granularity::PerChannel);
  EXPECT_EQ(p.scale[0], 1.0);
  EXPECT_EQ(p.zero_point[0], 0.0);
  EXPECT_EQ(p.degenerate[0], 1);
  EXPECT_EQ(p.degenerate[1], 0);
  EXPECT_EQ(p.degenerate_count(), 1u);
}

TEST(Uniform, PercentileClipsTails) {
  std::vector<double> v;
  for (int i = 0; i <= 1000; ++i) v.push_back(i / 1000.0);
  v.push_back(50.0);
  const auto stats = CalibrationStats::from_samples(v);
  const auto full = calibrate_uniform(stats, 8, Granularity::PerTensor, 1.0);
  const auto clipped = calibrate_uniform(stats, 8, Granularity::PerTensor, 0.99);
  EXPECT_DOUBLE_EQ(full.scale[0], 50.0 / 255.0);
  EXPECT_LT(clipped.scale[0], full.scale[0] / 10);
  EXPECT_THROW(calibrate_uniform(stats, 8, Granularity::PerTensor, 0.4), ConfigError);
}

TEST(Uniform, BitsOutOfRangeRejected) {
  EXPECT_THROW(uniform_from_range(0, 1, 0), ConfigError);
  EXPECT_THROW(uniform_from_range(0, 1, 9), ConfigError);
}

TEST(Log, CalibrationRules) {
  const auto soft = calibrate_log(CalibrationStats::from_range({0.001}, {0.9}), 4, 2.0);
  EXPECT_EQ(soft.offset, 0.0);
  EXPECT_EQ(soft.scale[0], 0.9);
  const auto signed_p = calibrate_log(CalibrationStats::from_range({-0.1}, {2.0}), 4, 2.0);
  EXPECT_DOUBLE_EQ(signed_p.offset, 0.1 + kLogOffsetFloor);
  EXPECT_DOUBLE_EQ(signed_p.scale[0], 2.1 + kLogOffsetFloor);
  EXPECT_GT(signed_p.scale[0], 0.0);
  EXPECT_THROW(calibrate_log(CalibrationStats::from_range({0}, {1}), 4, 1.0), ConfigError);
}

TEST(Log, ExactPowers) {
  const auto p2 = log_params(1, 0, 2, 4);
  auto c = quantize_log(vec({0.25}), p2);
  EXPECT_EQ(c[0], 2);
  EXPECT_EQ(dequantize_log<double>(c, p2)[0], 0.25);
  const auto pr = log_params(1, 0, std::numbers::sqrt2, 4);
  c = quantize_log(vec({0.5}), pr);
  EXPECT_EQ(c[0], 2);
  EXPECT_NEAR(dequantize_log<double>(c, pr)[0], 0.5, 1e-15);
}

TEST(Log, NonPowerExample) {
  // -log2(0.3) = 1.737 -> code 2 -> 0.25 (tests/oracles/gen_oracles.py).
  const auto p = log_params(1, 0, 2, 4);
  const auto c = quantize_log(vec({0.3}), p);
  EXPECT_EQ(c[0], 2);
  EXPECT_EQ(dequantize_log<double>(c, p)[0], 0.25);
}

TEST(Log, NonPositiveArgumentMapsToDeepestBin) {
  const auto p = log_params(1, 0.05, 2, 3);
  const auto c = quantize_log(vec({-0.05, -1.0}), p);
  EXPECT_EQ(c[0], 7);
  EXPECT_EQ(c[1], 7);
}

TEST(Log, SupportIsExactlyTheLevelSet) {
  const auto x = random_tensor<double>({20000}, 21, -0.2, 3.0);
  CalibrationStats st(1);
  st.observe(x);
  for (double a : {1.2, std::numbers::sqrt2, 2.0}) {
    const auto p = calibrate_log(st, 4, a);
    std::vector<double> levels;
    for (int k = 0; k <= 15; ++k) levels.push_back(p.scale[0] * std::pow(a, -k) - p.offset);
    for (std::size_t k = 1; k < levels.size(); ++k) EXPECT_LT(levels[k], levels[k - 1]);
    const auto y = fake_quant(x, p);
    for (double v : y.data()) ASSERT_NE(std::find(levels.begin(), levels.end(), v), levels.end()) << v;
    EXPECT_EQ(fake_quant(y, p), y);
  }
}

TEST(Log, MonotoneNonIncreasingCodes) {
  const auto p = log_params(2.0, 0.0, 1.5, 5);
  std::int32_t prev = 1 << 20;
  for (double x = 1e-4; x <= 3; x *= 1.01) {
    const auto c = quantize_log(vec({x}), p)[0];
    ASSERT_LE(c, prev);
    prev = c;
  }
}

TEST(AdaptiveBase, PerfectRepresentability) {
  std::vector<double> pow2, powr;
  for (int k = 0; k < 8; ++k) {
    pow2.push_back(std::pow(2.0, -k));
    powr.push_back(std::pow(std::numbers::sqrt2, -k));
  }
  EXPECT_EQ(search_adaptive_base(pow2, 4, default_base_grid()), 2.0);
  const std::vector<double> grid{std::numbers::sqrt2, 2.0};
  EXPECT_EQ(search_adaptive_base(powr, 4, grid), std::numbers::sqrt2);
}

TEST(AdaptiveBase, UniformSamplesMatchIndependentSearch) {
  std::vector<double> samples;
  for (int i = 0; i < 1000; ++i) samples.push_back((i + 1) / 1000.0);
  // Exhaustive recomputation in tests/oracles/gen_oracles.py.
  EXPECT_DOUBLE_EQ(search_adaptive_base(samples, 4, default_base_grid()), 1.2);
}

TEST(AdaptiveBase, GridValidation) {
  const std::vector<double> s{0.5};
  EXPECT_THROW(search_adaptive_base(s, 4, std::vector<double>{}), ConfigError);
  EXPECT_THROW(search_adaptive_base(s, 4, std::vector<double>{1.0}), ConfigError);
  EXPECT_EQ(default_base_grid().size(), 21u);
}

TEST(Identity, PassThrough) {
  const auto x = random_tensor<float>({5, 5}, 31);
  EXPECT_EQ(fake_quant(x, QuantParams::identity()), x);
}

TEST(Params, Validation) {
  QuantParams p = uniform_from_range(-1, 1, 4);
  EXPECT_NO_THROW(validate(p));
  p.scale[0] = 0;
  EXPECT_THROW(validate(p), ConfigError);
  p = uniform_from_range(-1, 1, 4);
  p.zero_point[0] = 16;
  EXPECT_THROW(validate(p), ConfigError);
}

TEST(Stats, DecimationKeepsBoundedBuffer) {
  CalibrationStats st(1, true, 100);
  for (int i = 0; i < 100000; ++i) st.observe_value(0, i);
  EXPECT_LT(st.samples(0).size(), 200u);
  EXPECT_EQ(st.min(0), 0);
  EXPECT_EQ(st.max(0), 99999);
  EXPECT_NEAR(st.quantile(0, 0.75), 75000, 1500);
}

}  // namespace
}  // namespace mixq::quant
