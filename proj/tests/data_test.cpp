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

#include <set>

#include "mixq/data.hpp"
#include "test_util.hpp"

namespace mixq::data {
namespace {

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.num_blocks = 1;
  c.embed_dim = 8;
  c.heads = 2;
  c.mlp_dim = 16;
  c.image_size = 8;
  c.tokens = 16;
  c.classes = 3;
  c.seed = 1;
  return c;
}

SynthConfig small_synth() {
  SynthConfig s;
  s.train = 60;
  s.eval = 30;
  return s;
}

TEST(Synth, DeterministicAndBalanced) {
  const auto a = synthesize(tiny(), small_synth(), 5);
  const auto b = synthesize(tiny(), small_synth(), 5);
  EXPECT_EQ(a.train.images, b.train.images);
  EXPECT_EQ(a.eval.labels, b.eval.labels);
  EXPECT_FALSE(synthesize(tiny(), small_synth(), 6).train.images == a.train.images);
  EXPECT_EQ(a.train.images.shape(), (Shape{60, 8, 8, 3}));
  std::vector<int> counts(3, 0);
  for (auto l : a.train.labels) ++counts[l];
  EXPECT_EQ(counts, (std::vector<int>{20, 20, 20}));
}

TEST(Synth, Validation) {
  SynthConfig s;
  s.train = 0;
  EXPECT_THROW(synthesize(tiny(), s, 0), ConfigError);
  s = SynthConfig{};
  s.noise = -1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Synth, SaveLoadBitExact) {
  const auto dir = testing::temp_dir("data_splits");
  const auto a = synthesize(tiny(), small_synth(), 3);
  save_splits(a, dir, "ds");
  const auto b = load_splits(dir, "ds");
  EXPECT_EQ(b.train.images, a.train.images);
  EXPECT_EQ(b.train.labels, a.train.labels);
  EXPECT_EQ(b.eval.images, a.eval.images);
  EXPECT_EQ(b.eval.labels, a.eval.labels);
}

TEST(Sampling, DistinctSeededIndices) {
  const auto a = sample_without_replacement(100, 32, 9);
  EXPECT_EQ(a.size(), 32u);
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 32u);
  for (auto i : a) EXPECT_LT(i, 100u);
  EXPECT_EQ(sample_without_replacement(100, 32, 9), a);
  EXPECT_NE(sample_without_replacement(100, 32, 10), a);
  const auto all = sample_without_replacement(5, 5, 1);
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 5u);
  EXPECT_THROW(sample_without_replacement(3, 4, 1), ConfigError);
}

TEST(Dataset, SubsetAndCast) {
  const auto s = synthesize(tiny(), small_synth(), 2);
  const auto sub = s.train.subset({4, 1});
  EXPECT_EQ(sub.size(), 2u);
  EXPECT_EQ(sub.labels[0], s.train.labels[4]);
  EXPECT_EQ(model::image_at(sub.images, 1), model::image_at(s.train.images, 1));
  EXPECT_THROW(s.train.subset({600}), DimensionError);
  const auto f = sub.cast<float>();
  EXPECT_EQ(f.images[3], static_cast<float>(sub.images[3]));
}

TEST(Train, LearnsAndIsDeterministic) {
  const auto c = tiny();
  const auto s = synthesize(c, small_synth(), 4);
  TrainConfig t;
  t.epochs = 6;
  t.batch = 10;
  t.lr = 5e-3;
  auto m1 = model::init_weights<double>(c);
  auto m2 = m1;
  const double before = accuracy(m1, s.train);
  const auto log1 = train(m1, s.train, t, 8);
  const auto log2 = train(m2, s.train, t, 8);
  EXPECT_EQ(m1, m2);
  EXPECT_EQ(log1.epoch_loss, log2.epoch_loss);
  ASSERT_EQ(log1.epoch_loss.size(), 6u);
  EXPECT_LT(log1.epoch_loss.back(), log1.epoch_loss.front());
  EXPECT_GE(accuracy(m1, s.train), before);
  t.lr = 0;
  EXPECT_THROW(train(m1, s.train, t, 0), ConfigError);
}

}  // namespace
}  // namespace mixq::data
