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

#include "mixq/model.hpp"
#include "test_util.hpp"

namespace mixq::model {
namespace {

using testing::random_tensor;

ModelConfig small_config() {
  ModelConfig c;
  c.num_blocks = 2;
  c.embed_dim = 16;
  c.heads = 2;
  c.mlp_dim = 32;
  c.image_size = 8;
  c.patch_size = 2;
  c.tokens = 16;
  c.classes = 5;
  c.seed = 3;
  return c;
}

Tensor<double> golden_image() {
  Tensor<double> img(Shape{1, 16, 16, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::sin(0.1 * double(i)) + 0.25 * std::cos(0.37 * double(i));
  return img;
}

TEST(Config, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.classes = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(LayerIds, NamesRoundTrip) {
  for (const auto& info : layer_registry(ModelConfig{})) EXPECT_EQ(LayerId::parse(info.id.name()), info.id);
  EXPECT_EQ(LayerId::parse("head").kind, LayerKind::Head);
  EXPECT_EQ((LayerId{2, LayerKind::FC1}.name()), "blocks.2.fc1");
  EXPECT_THROW(LayerId::parse("blocks.x.fc1"), ConfigError);
  EXPECT_THROW(kind_from_name("conv"), ConfigError);
}

TEST(Init, DeterministicAndSeedSensitive) {
  const auto c = small_config();
  EXPECT_EQ(init_weights<double>(c), init_weights<double>(c));
  auto c2 = c;
  c2.seed = 4;
  EXPECT_FALSE(init_weights<double>(c) == init_weights<double>(c2));
  const auto m = init_weights<double>(c);
  EXPECT_EQ(m.blocks[0].qkv.weight.shape(), (Shape{16, 48}));
  EXPECT_EQ(m.blocks[1].fc1.weight.shape(), (Shape{16, 32}));
  EXPECT_EQ(m.head.weight.shape(), (Shape{16, 5}));
  // float weights are the double draws rounded
  const auto f = init_weights<float>(c);
  EXPECT_EQ(f.blocks[0].qkv.weight[7], static_cast<float>(m.blocks[0].qkv.weight[7]));
}

TEST(Init, ScaledNormal) {
  ModelConfig c;
  c.seed = 11;
  const auto m = init_weights<double>(c);
  double s = 0, s2 = 0;
  for (double v : m.blocks[0].fc1.weight.data()) s += v, s2 += v * v;
  const double n = static_cast<double>(m.blocks[0].fc1.weight.size());
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(std::sqrt(s2 / n), 1.0 / std::sqrt(64.0), 0.01);
}

TEST(Registry, CountsFromShapes) {
  ModelConfig c;
  c.embed_dim = 16;
  c.heads = 2;
  c.mlp_dim = 32;
  c.tokens = 17;
  const auto reg = layer_registry(c);
  auto find = [&](LayerKind k) {
    for (const auto& i : reg)
      if (i.id.kind == k) return i;
    return LayerInfo{};
  };
  EXPECT_EQ(find(LayerKind::FC1).params, 544u);
  EXPECT_EQ(find(LayerKind::MatMul1).params, 0u);
  EXPECT_EQ(find(LayerKind::MatMul2).params, 0u);
  EXPECT_EQ(find(LayerKind::PostSoftmax).params, 0u);
  EXPECT_EQ(find(LayerKind::PostGELU).params, 0u);
  EXPECT_EQ(find(LayerKind::QKV).macs, 13056u);  // N * D * 3D
  EXPECT_EQ(reg.size(), 2u + 8u * static_cast<std::size_t>(c.num_blocks));
  EXPECT_EQ(reg.front().id.kind, LayerKind::PatchEmbed);
  EXPECT_EQ(reg.back().id.kind, LayerKind::Head);
}

TEST(Forward, GoldenLogits) {
  // Pinned from a double-precision run of this implementation.
  ModelConfig c;
  c.seed = 7;
  const auto m = init_weights<double>(c);
  const double expect[] = {-1.8536795962249657, 0.12623885422910563, -1.3555285953504561, -1.4561280236164516,
                           0.62113256054350807, 1.9299239487252537,  -0.3892296654159047, -1.8138147961390143,
                           -0.64206045765283526, -1.6898647742647379};
  const auto r = forward(m, golden_image(), QuantPlan{});
  for (int j = 0; j < 10; ++j) EXPECT_NEAR(r.logits[j], expect[j], 1e-12) << j;
}

TEST(Forward, ResidualOnlyPathWithZeroBlockWeights) {
  const auto c = small_config();
  auto m = init_weights<double>(c);
  for (auto& b : m.blocks) {
    for (auto* lin : {&b.qkv, &b.proj, &b.fc1, &b.fc2}) {
      std::fill(lin->weight.data().begin(), lin->weight.data().end(), 0.0);
      std::fill(lin->bias.data().begin(), lin->bias.data().end(), 0.0);
    }
  }
  for (auto& v : m.patch_embed.bias.data()) v = 0.1;
  for (auto& v : m.head.bias.data()) v = -0.2;
  const auto img = random_tensor<double>({1, 8, 8, 3}, 5);
  const auto logits = forward(m, img, QuantPlan{}).logits;

  // head(mean_rows(patchify(x) W + b + pos)) evaluated by hand.
  const auto p = patchify(image_at(img, 0), c);
  const std::size_t n = 16, d = 16;
  std::vector<double> pooled(d, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      double v = m.patch_embed.bias[j] + m.pos_embed.at(t, j);
      for (std::size_t q = 0; q < p.cols(); ++q) v += p.at(t, q) * m.patch_embed.weight.at(q, j);
      pooled[j] += v / n;
    }
  for (std::size_t k = 0; k < 5; ++k) {
    double z = m.head.bias[k];
    for (std::size_t j = 0; j < d; ++j) z += pooled[j] * m.head.weight.at(j, k);
    EXPECT_NEAR(logits[k], z, 1e-12);
  }
}

TEST(Forward, AttentionRowsSumToOne) {
  const auto c = small_config();
  const auto m = init_weights<float>(c);
  const auto r = forward(m, random_tensor<float>({2, 8, 8, 3}, 6), QuantPlan{}, true);
  for (const auto& tr : r.traces) {
    for (int l = 0; l < c.num_blocks; ++l) {
      const auto& taps = tr.taps.at(LayerId{l, LayerKind::PostSoftmax}).output;
      ASSERT_EQ(taps.size(), 2u);
      for (auto v : taps) {
        const auto& probs = tr.graph.value(v);
        for (std::size_t i = 0; i < probs.rows(); ++i) {
          double s = 0;
          for (std::size_t j = 0; j < probs.cols(); ++j) s += probs.at(i, j);
          EXPECT_NEAR(s, 1.0, 1e-6);
        }
      }
    }
  }
}

TEST(Forward, IdentityPlanEqualsEmptyPlanBitwise) {
  const auto c = small_config();
  const auto m = init_weights<float>(c);
  QuantPlan plan;
  for (const auto& info : layer_registry(c)) {
    SiteQuant s;
    s.input = quant::QuantParams::identity();
    if (info.id.kind == LayerKind::MatMul1) s.input_b = quant::QuantParams::identity();
    if (has_weights(info.id.kind)) s.weight = quant::QuantParams::identity();
    plan.sites[info.id] = s;
  }
  const auto img = random_tensor<float>({3, 8, 8, 3}, 7);
  EXPECT_EQ(forward(m, img, QuantPlan{}).logits, forward(m, img, plan).logits);
}

TEST(Forward, CaptureDoesNotChangeLogits) {
  const auto c = small_config();
  const auto m = init_weights<float>(c);
  const auto img = random_tensor<float>({3, 8, 8, 3}, 8);
  EXPECT_EQ(forward(m, img, QuantPlan{}).logits, forward(m, img, QuantPlan{}, true).logits);
}

TEST(Forward, BatchPermutationPermutesRows) {
  const auto c = small_config();
  const auto m = init_weights<double>(c);
  const auto img = random_tensor<double>({3, 8, 8, 3}, 9);
  Tensor<double> perm(img.shape());
  const std::size_t per = 8 * 8 * 3;
  const std::size_t order[] = {2, 0, 1};
  for (std::size_t b = 0; b < 3; ++b) std::copy_n(img.ptr() + order[b] * per, per, perm.ptr() + b * per);
  const auto a = forward(m, img, QuantPlan{}).logits, p = forward(m, perm, QuantPlan{}).logits;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(p.at(b, k), a.at(order[b], k));
}

TEST(Forward, UnknownLayerInPlanRejected) {
  const auto c = small_config();
  QuantPlan plan;
  plan.sites[LayerId{5, LayerKind::QKV}].input = quant::QuantParams::identity();
  EXPECT_THROW(validate_plan(plan, c), ConfigError);
  const auto m = init_weights<double>(c);
  EXPECT_THROW(forward(m, random_tensor<double>({1, 8, 8, 3}, 1), plan), ConfigError);
  EXPECT_THROW(forward(m, random_tensor<double>({1, 6, 6, 3}, 1), QuantPlan{}), DimensionError);
}

TEST(Forward, LogitGradientMatchesFiniteDifferences) {
  ModelConfig c = small_config();
  const auto m = init_weights<double>(c);
  const auto img = image_at(random_tensor<double>({1, 8, 8, 3}, 10), 0);
  ForwardOptions<double> opt;
  opt.input_requires_grad = true;
  const auto tr = trace_sample(m, img, QuantPlan{}, opt);
  Tensor<double> seed(Shape{1, 5});
  seed[2] = 1;
  const auto g = tr.graph.backward(tr.logits, seed);
  const auto& grad = g[tr.image];
  const auto patches = patchify(img, c);
  // Perturb the image through patchify's inverse mapping: compare on a sample of entries.
  const double h = 1e-5;
  for (std::size_t i = 0; i < img.size(); i += 7) {
    Tensor<double> ip = img, im = img;
    ip[i] += h;
    im[i] -= h;
    const double fp = forward(m, ip.reshaped({1, 8, 8, 3}), QuantPlan{}).logits[2];
    const double fm = forward(m, im.reshaped({1, 8, 8, 3}), QuantPlan{}).logits[2];
    const double num = (fp - fm) / (2 * h);
    // locate the patch entry holding pixel i
    const std::size_t ch = i % 3, px = (i / 3) % 8, py = i / 24;
    const std::size_t tok = (py / 2) * 4 + px / 2, q = ((py % 2) * 2 + px % 2) * 3 + ch;
    EXPECT_LE(testing::rel_err(grad.at(tok, q), num), 1e-4) << i;
  }
  (void)patches;
}

TEST(Cast, RoundTrip) {
  const auto m = init_weights<double>(small_config());
  EXPECT_EQ(m.cast<double>(), m);
  const auto f = m.cast<float>();
  EXPECT_EQ(f.blocks[1].fc2.bias.size(), m.blocks[1].fc2.bias.size());
}

}  // namespace
}  // namespace mixq::model
