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

#include <algorithm>
#include <cmath>

#include "mixq/ptq.hpp"
#include "test_util.hpp"

namespace mixq::ptq {
namespace {

using model::LayerId;
using model::LayerKind;
using model::TapPoint;
using testing::random_tensor;

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.num_blocks = 2;
  c.embed_dim = 16;
  c.heads = 2;
  c.mlp_dim = 32;
  c.image_size = 8;
  c.tokens = 16;
  c.classes = 4;
  c.seed = 13;
  return c;
}

struct Fixture : ::testing::Test {
  model::ToyViT<double> fp = model::init_weights<double>(small_config());
  Tensor<double> images = random_tensor<double>({6, 8, 8, 3}, 2);
  PtqOptions opt;
  CalibrationSet calib = collect_calibration(fp, images, opt);
};

TEST(SiteKeys, NamesRoundTrip) {
  const SiteKey k{{1, LayerKind::MatMul1}, TapPoint::InputB};
  EXPECT_EQ(site_key_name(k), "blocks.1.matmul1:input_b");
  EXPECT_EQ(site_key_from_name(site_key_name(k)), k);
  EXPECT_THROW(site_key_from_name("blocks.1.matmul1"), ConfigError);
  EXPECT_THROW(site_key_from_name("blocks.1.matmul1:middle"), ConfigError);
}

TEST(Options, Validation) {
  PtqOptions o;
  EXPECT_NO_THROW(o.validate());
  o.ln_percentile = 0.4;
  EXPECT_THROW(o.validate(), ConfigError);
  o = PtqOptions{};
  o.base_grid = {1.0};
  EXPECT_THROW(o.validate(), ConfigError);
  o = PtqOptions{};
  o.adaptive_base = false;
  o.fixed_base = 0.5;
  EXPECT_THROW(o.validate(), ConfigError);
}

TEST(UniformBits, CoversRegistry) {
  const auto c = small_config();
  const auto bits = uniform_bits(c, 5);
  EXPECT_EQ(bits.size(), model::layer_registry(c).size());
  for (const auto& [id, b] : bits) EXPECT_EQ(b, 5);
}

TEST_F(Fixture, CalibrationCoversEverySite) {
  EXPECT_EQ(calib.images, 6u);
  EXPECT_EQ(calib.stats.size(), 2u + 8u * 2u);
  EXPECT_EQ(calib.at({{0, LayerKind::LN1}, TapPoint::Output}).channels(), 16u);
  EXPECT_TRUE(calib.at({{1, LayerKind::PostSoftmax}, TapPoint::Input}).keeps_samples());
  for (const auto& [k, st] : calib.stats) EXPECT_TRUE(st.observed()) << site_key_name(k);
  // softmax probabilities stay inside [0, 1]
  const auto& sm = calib.at({{0, LayerKind::PostSoftmax}, TapPoint::Input});
  EXPECT_GE(sm.min(0), 0.0);
  EXPECT_LE(sm.max(0), 1.0);
  EXPECT_THROW(calib.at({{0, LayerKind::FC2}, TapPoint::Input}), ConfigError);
}

TEST_F(Fixture, CalibrationSaveLoadRoundTrip) {
  const auto dir = testing::temp_dir("ptq_calib");
  calib.save(dir, "calib");
  const auto back = CalibrationSet::load(dir, "calib");
  EXPECT_EQ(back.images, calib.images);
  ASSERT_EQ(back.stats.size(), calib.stats.size());
  for (const auto& [k, st] : calib.stats) {
    const auto& b = back.at(k);
    EXPECT_EQ(b.mins(), st.mins());
    EXPECT_EQ(b.maxs(), st.maxs());
    EXPECT_EQ(b.count(), st.count());
    EXPECT_EQ(b.pooled_samples(), st.pooled_samples());
  }
  // Same calibration, same quantizers.
  const auto bits = uniform_bits(fp.config, 4);
  EXPECT_EQ(build_quantized(fp, back, bits, opt).plan, build_quantized(fp, calib, bits, opt).plan);
}

TEST_F(Fixture, PlanShapeWithCrl) {
  const auto qm = build_quantized(fp, calib, uniform_bits(fp.config, 4), opt);
  EXPECT_EQ(qm.records.size(), 4u);
  EXPECT_EQ(qm.plan.sites.size(), model::layer_registry(fp.config).size());
  const auto& qkv = qm.plan.sites.at({0, LayerKind::QKV});
  ASSERT_TRUE(qkv.weight && qkv.input);
  EXPECT_EQ(qkv.input->scheme.granularity, quant::Granularity::PerChannel);
  EXPECT_EQ(qkv.weight->scheme.granularity, quant::Granularity::PerChannel);
  EXPECT_EQ(qkv.input->bits, 4);
  const auto& sm = qm.plan.sites.at({1, LayerKind::PostSoftmax});
  ASSERT_TRUE(sm.input);
  EXPECT_EQ(sm.input->scheme.kind, quant::Kind::LogBase);
  const auto grid = quant::default_base_grid();
  EXPECT_NE(std::find(grid.begin(), grid.end(), sm.input->scheme.base), grid.end());
  EXPECT_FALSE(qm.plan.sites.at({0, LayerKind::PostSoftmax}).weight);
  EXPECT_TRUE(qm.plan.sites.at({0, LayerKind::MatMul1}).input_b);
  EXPECT_FALSE(qm.plan.sites.at({0, LayerKind::FC2}).input);
  EXPECT_EQ(qm.plan.crl_blocks, (std::vector<bool>{true, true}));
}

TEST_F(Fixture, PlanWithoutCrlKeepsModel) {
  opt.crl = false;
  const auto qm = build_quantized(fp, calib, uniform_bits(fp.config, 4), opt);
  EXPECT_TRUE(qm.records.empty());
  EXPECT_EQ(qm.model, fp);
  EXPECT_EQ(qm.plan.sites.at({1, LayerKind::FC1}).input->scheme.granularity, quant::Granularity::PerTensor);
  opt.log_post_gelu = false;
  const auto uni = build_quantized(fp, calib, uniform_bits(fp.config, 4), opt);
  EXPECT_EQ(uni.plan.sites.at({0, LayerKind::PostGELU}).input->scheme.kind, quant::Kind::UniformAffine);
}

TEST_F(Fixture, FixedBaseUsedWhenNotAdaptive) {
  opt.adaptive_base = false;
  opt.fixed_base = 2.0;
  const auto qm = build_quantized(fp, calib, uniform_bits(fp.config, 3), opt);
  EXPECT_EQ(qm.plan.sites.at({0, LayerKind::PostSoftmax}).input->scheme.base, 2.0);
}

TEST_F(Fixture, MissingBitsLeaveLayerFullPrecision) {
  auto bits = uniform_bits(fp.config, 4);
  bits.erase({0, LayerKind::Head});
  bits.erase({1, LayerKind::FC1});
  const auto qm = build_quantized(fp, calib, bits, opt);
  EXPECT_EQ(qm.plan.find({0, LayerKind::Head}), nullptr);
  EXPECT_EQ(qm.plan.find({1, LayerKind::FC1}), nullptr);
  // CRL needs every LayerNorm pair quantized, so it is skipped here.
  EXPECT_TRUE(qm.records.empty());
  bits[{0, LayerKind::Head}] = 9;
  EXPECT_THROW(build_quantized(fp, calib, bits, opt), ConfigError);
}

TEST_F(Fixture, EightBitTracksFullPrecision) {
  const auto q8 = build_quantized(fp, calib, uniform_bits(fp.config, 8), opt);
  const auto q2 = build_quantized(fp, calib, uniform_bits(fp.config, 2), opt);
  const auto ref = model::forward(fp, images, model::QuantPlan{}).logits;
  const auto a = model::forward(q8.model, images, q8.plan).logits;
  const auto b = model::forward(q2.model, images, q2.plan).logits;
  double e8 = 0, e2 = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    e8 += std::abs(a[i] - ref[i]);
    e2 += std::abs(b[i] - ref[i]);
  }
  EXPECT_LT(e8, e2);
  EXPECT_LT(e8 / ref.size(), 0.05);
}

}  // namespace
}  // namespace mixq::ptq
