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
#include <limits>

#include "mixq/crl.hpp"
#include "test_util.hpp"

namespace mixq::crl {
namespace {

using model::LayerId;
using model::LayerKind;
using testing::random_tensor;

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

TEST(Clip, EqualScalesUntouched) {
  const std::vector<double> s(6, 0.25), z(6, 7.0);
  const auto r = clip_channel_params(s, z, ClipPolicy{});
  EXPECT_EQ(r.sigma_s, 0.0);
  EXPECT_EQ(r.s_hat, s);
  EXPECT_EQ(r.z_hat, z);
  for (double v : r.v1) EXPECT_EQ(v, 1.0);
  for (double v : r.v2) EXPECT_EQ(v, 0.0);
}

TEST(Clip, TenChannelOutlier) {
  std::vector<double> s(9, 1.0);
  s.push_back(10.0);
  const auto r = clip_channel_params(s, zeros(10), ClipPolicy{2.0});
  // Values from an independent script.
  EXPECT_DOUBLE_EQ(r.mu_s, 1.9);
  EXPECT_DOUBLE_EQ(r.sigma_s, 2.6999999999999997);
  EXPECT_DOUBLE_EQ(r.s_hi, 7.299999999999999);
  for (int i = 0; i < 9; ++i) {
    EXPECT_EQ(r.s_hat[i], 1.0);
    EXPECT_EQ(r.v1[i], 1.0);
  }
  EXPECT_DOUBLE_EQ(r.s_hat[9], 7.299999999999999);
  EXPECT_DOUBLE_EQ(r.v1[9], 1.3698630136986303);
  EXPECT_EQ(r.s_clipped_high, 1u);
  EXPECT_EQ(r.s_clipped_low, 0u);
}

TEST(Clip, InfiniteKIsIdentity) {
  const auto s = random_tensor<double>({12}, 4, 0.1, 5.0).values();
  const auto z = random_tensor<double>({12}, 5, 0.0, 15.0).values();
  const auto r = clip_channel_params(s, z, ClipPolicy{std::numeric_limits<double>::infinity()});
  EXPECT_EQ(r.s_hat, s);
  EXPECT_EQ(r.z_hat, z);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(r.v1[i], 1.0);
    EXPECT_EQ(r.v2[i], 0.0);
  }
}

TEST(Clip, NonPositiveLowerBandRaised) {
  const std::vector<double> s{0.1, 0.1, 0.1, 0.1, 10.0};
  const auto r = clip_channel_params(s, zeros(5), ClipPolicy{2.0});
  ASSERT_LE(r.mu_s - 2.0 * r.sigma_s, 0.0);
  EXPECT_EQ(r.s_lo, 0.1);
  for (double v : r.s_hat) EXPECT_GT(v, 0.0);
  for (double v : r.v1) EXPECT_GT(v, 0.0);
}

TEST(Clip, Errors) {
  EXPECT_THROW(clip_channel_params(std::vector<double>{1.0, 0.0}, zeros(2), ClipPolicy{}), ConfigError);
  EXPECT_THROW(clip_channel_params(std::vector<double>{1.0}, zeros(2), ClipPolicy{}), DimensionError);
  EXPECT_THROW(clip_channel_params(std::vector<double>{1.0}, zeros(1), ClipPolicy{0.0}), ConfigError);
}

TEST(Clip, ContainmentSpreadAndIdempotence) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = random_tensor<double>({16}, seed, 0.01, 1.0).values();
    auto z = random_tensor<double>({16}, seed + 100, 0.0, 15.0).values();
    s[seed % 16] *= 40.0;  // outlier channel
    const auto r = clip_channel_params(s, z, ClipPolicy{2.0});
    const double lo_s = std::max(r.mu_s - 2 * r.sigma_s, *std::min_element(s.begin(), s.end()));
    for (std::size_t i = 0; i < 16; ++i) {
      EXPECT_GE(r.s_hat[i], lo_s);
      EXPECT_LE(r.s_hat[i], r.mu_s + 2 * r.sigma_s);
      EXPECT_GE(r.z_hat[i], r.mu_z - 2 * r.sigma_z);
      EXPECT_LE(r.z_hat[i], r.mu_z + 2 * r.sigma_z);
    }
    const auto [smin, smax] = std::minmax_element(s.begin(), s.end());
    const auto [hmin, hmax] = std::minmax_element(r.s_hat.begin(), r.s_hat.end());
    EXPECT_LE(*hmax / *hmin, *smax / *smin);

    // Re-clipping: when the clipped values sit inside their own band nothing moves.
    const auto again = clip_channel_params(r.s_hat, r.z_hat, ClipPolicy{2.0});
    bool contained = true;
    for (std::size_t i = 0; i < 16; ++i) {
      contained &= r.s_hat[i] >= again.mu_s - 2 * again.sigma_s && r.s_hat[i] <= again.mu_s + 2 * again.sigma_s;
      contained &= r.z_hat[i] >= again.mu_z - 2 * again.sigma_z && r.z_hat[i] <= again.mu_z + 2 * again.sigma_z;
    }
    if (contained) {
      for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_EQ(again.v1[i], 1.0);
        EXPECT_EQ(again.v2[i], 0.0);
      }
    }
    const auto inf = clip_channel_params(r.s_hat, r.z_hat, ClipPolicy{std::numeric_limits<double>::infinity()});
    for (std::size_t i = 0; i < 16; ++i) {
      EXPECT_EQ(inf.v1[i], 1.0);
      EXPECT_EQ(inf.v2[i], 0.0);
    }
  }
}

TEST(Fold, LayerNormExample) {
  model::Norm<double> ln{Tensor<double>(Shape{1}, {2.0}), Tensor<double>(Shape{1}, {3.0})};
  const std::vector<double> s{1}, v1{2}, v2{4};
  const auto out = fold_into_layernorm(ln, s, v1, v2);
  EXPECT_EQ(out.gamma[0], 1.0);
  EXPECT_EQ(out.beta[0], 3.5);
  const std::vector<double> one{1}, zero{0};
  EXPECT_EQ(fold_into_layernorm(ln, s, one, zero).gamma, ln.gamma);
  EXPECT_EQ(fold_into_layernorm(ln, s, one, zero).beta, ln.beta);
}

TEST(Fold, LayerNormChannelsIndependent) {
  model::Norm<double> ln{random_tensor<double>({4}, 1), random_tensor<double>({4}, 2)};
  const std::vector<double> s{1, 1, 1, 1}, v1{1, 1, 3, 1}, v2{0, 0, 2, 0};
  const auto out = fold_into_layernorm(ln, s, v1, v2);
  for (std::size_t i : {0u, 1u, 3u}) {
    EXPECT_EQ(out.gamma[i], ln.gamma[i]);
    EXPECT_EQ(out.beta[i], ln.beta[i]);
  }
  EXPECT_NE(out.gamma[2], ln.gamma[2]);
}

TEST(Fold, LinearExample) {
  model::Linear<double> lin{Tensor<double>(Shape{2, 2}, {1, 0, 0, 1}), Tensor<double>(Shape{2})};
  const std::vector<double> s{1, 1}, v1{1, 1}, v2{1, 0};
  const auto out = fold_into_next_linear(lin, s, v1, v2);
  EXPECT_EQ(out.bias[0], -1.0);
  EXPECT_EQ(out.bias[1], 0.0);
  EXPECT_EQ(out.weight, lin.weight);
  const std::vector<double> zero{0, 0};
  const auto same = fold_into_next_linear(lin, s, v1, zero);
  EXPECT_EQ(same.weight, lin.weight);
  EXPECT_EQ(same.bias, lin.bias);
}

TEST(Fold, ExactnessIdentity) {
  // X W + b == X_hat W_hat + b_hat with X_hat = (X + s v2) / v1.
  const std::size_t n = 7, d = 6, m = 5;
  const auto x = random_tensor<double>({n, d}, 10, -3, 3);
  model::Linear<double> lin{random_tensor<double>({d, m}, 11), random_tensor<double>({m}, 12)};
  const auto s = random_tensor<double>({d}, 13, 0.01, 0.5).values();
  const auto v1 = random_tensor<double>({d}, 14, 0.5, 3.0).values();
  const auto v2 = random_tensor<double>({d}, 15, -4.0, 4.0).values();
  const auto hat = fold_into_next_linear(lin, s, v1, v2);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) {
      double ref = lin.bias[j], got = hat.bias[j];
      for (std::size_t i = 0; i < d; ++i) {
        ref += x.at(r, i) * lin.weight.at(i, j);
        got += (x.at(r, i) + s[i] * v2[i]) / v1[i] * hat.weight.at(i, j);
      }
      EXPECT_LE(std::abs(got - ref), 1e-10 * std::max(1.0, std::abs(ref)));
    }
}

struct CrlSetup {
  model::ToyViT<double> model;
  std::map<LayerId, quant::CalibrationStats> stats;
  std::map<LayerId, int> bits;
};

CrlSetup make_setup() {
  model::ModelConfig c;
  c.num_blocks = 2;
  c.embed_dim = 16;
  c.heads = 2;
  c.mlp_dim = 32;
  c.image_size = 8;
  c.tokens = 16;
  c.classes = 4;
  c.seed = 21;
  CrlSetup su{model::init_weights<double>(c), {}, {}};
  // Non-trivial LayerNorm affine terms so the folded model differs from the original.
  for (auto& b : su.model.blocks)
    for (auto* ln : {&b.ln1, &b.ln2}) {
      ln->gamma = random_tensor<double>({16}, 30 + ln->gamma.size(), 0.5, 2.0);
      ln->beta = random_tensor<double>({16}, 40, -0.5, 0.5);
    }
  for (int l = 0; l < 2; ++l) {
    for (auto kind : {LayerKind::LN1, LayerKind::LN2}) {
      auto lo = random_tensor<double>({16}, 50 + l, -2.0, -0.1).values();
      auto hi = random_tensor<double>({16}, 60 + l, 0.1, 2.0).values();
      hi[3] = 25.0;  // outlier channel
      lo[5] = -18.0;
      su.stats.emplace(LayerId{l, kind}, quant::CalibrationStats::from_range(lo, hi));
    }
    su.bits[{l, LayerKind::QKV}] = 4;
    su.bits[{l, LayerKind::FC1}] = 4;
  }
  return su;
}

TEST(ApplyCrl, PreservesFullPrecisionLogits) {
  const auto su = make_setup();
  const auto r = apply_crl(su.model, su.stats, ClipPolicy{2.0}, su.bits);
  ASSERT_EQ(r.records.size(), 4u);
  EXPECT_FALSE(r.model == su.model);
  std::size_t clipped = 0;
  for (const auto& rec : r.records) clipped += rec.clip.s_clipped_high + rec.clip.s_clipped_low;
  EXPECT_GT(clipped, 0u);
  const auto img = random_tensor<double>({10, 8, 8, 3}, 70);
  const auto a = model::forward(su.model, img, model::QuantPlan{}).logits;
  const auto b = model::forward(r.model, img, model::QuantPlan{}).logits;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(testing::rel_err(b[i], a[i]), 1e-10);

  const auto rf = apply_crl(su.model.cast<float>(), su.stats, ClipPolicy{2.0}, su.bits);
  const auto af = model::forward(su.model.cast<float>(), img.cast<float>(), model::QuantPlan{}).logits;
  const auto bf = model::forward(rf.model, img.cast<float>(), model::QuantPlan{}).logits;
  for (std::size_t i = 0; i < af.size(); ++i) EXPECT_LE(testing::rel_err(bf[i], af[i]), 1e-5);
}

TEST(ApplyCrl, InfiniteKLeavesWeightsBitwise) {
  const auto su = make_setup();
  const auto r = apply_crl(su.model, su.stats, ClipPolicy{std::numeric_limits<double>::infinity()}, su.bits);
  EXPECT_EQ(r.model, su.model);
  for (const auto& [id, q] : r.inputs) {
    EXPECT_EQ(q.scheme.granularity, quant::Granularity::PerChannel);
    EXPECT_EQ(q.channels(), 16u);
  }
}

TEST(ApplyCrl, ActivationParamsUseClippedScale) {
  const auto su = make_setup();
  const auto r = apply_crl(su.model, su.stats, ClipPolicy{2.0}, su.bits);
  for (const auto& rec : r.records) {
    const auto& q = r.inputs.at(rec.next);
    EXPECT_EQ(q.scale, rec.clip.s_hat);
    for (std::size_t c = 0; c < q.channels(); ++c) {
      EXPECT_EQ(q.zero_point[c], std::clamp(std::round(rec.clip.z_hat[c]), 0.0, q.qmax()));
      EXPECT_GT(rec.clip.v1[c], 0.0);
    }
  }
}

TEST(ApplyCrl, MissingStatsRejected) {
  auto su = make_setup();
  su.stats.erase(LayerId{1, LayerKind::LN2});
  EXPECT_THROW(apply_crl(su.model, su.stats, ClipPolicy{}, su.bits), ConfigError);
  auto su2 = make_setup();
  su2.bits.erase(LayerId{0, LayerKind::QKV});
  EXPECT_THROW(apply_crl(su2.model, su2.stats, ClipPolicy{}, su2.bits), ConfigError);
}

}  // namespace
}  // namespace mixq::crl
