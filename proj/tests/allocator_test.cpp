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

#include <random>

#include "mixq/allocator.hpp"
#include "mixq/error.hpp"

namespace mixq::alloc {
namespace {

AllocationInstance two_layer() {
  AllocationInstance inst;
  inst.layers = {{"A", 100, 50, 0.6, 0, {}}, {"B", 100, 150, 0.4, 1, {}}};
  inst.bits = {2, 3, 4};
  inst.lambda = {{0, 0, 0}, {0, 0, 0}};
  return inst;
}

AllocationInstance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nl(1, 10), nb(2, 5), kinds(1, 4), params(0, 400), macs(0, 2000);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AllocationInstance inst;
  const int n = nl(rng), b = nb(rng), k = kinds(rng);
  int bit = 1 + static_cast<int>(rng() % 2);
  for (int i = 0; i < b; ++i) inst.bits.push_back(bit), bit += 1 + static_cast<int>(rng() % 2);
  for (int r = 0; r < k; ++r) {
    std::vector<double> row;
    for (int i = 0; i < b; ++i) row.push_back(u(rng) < 0.3 ? 0.0 : u(rng) * 0.2);
    inst.lambda.push_back(row);
  }
  inst.orientation = rng() % 2 ? Orientation::Verbatim : Orientation::Mirrored;
  for (int i = 0; i < n; ++i) {
    AllocLayer l;
    l.name = "L" + std::to_string(i);
    l.params = static_cast<std::uint64_t>(rng() % 3 == 0 ? 0 : params(rng));
    l.macs = static_cast<std::uint64_t>(rng() % 4 == 0 ? 0 : macs(rng));
    // Coarse omegas so exact ties occur and the tie-break is exercised.
    l.omega = static_cast<double>(rng() % 5) / 8.0;
    l.kind = static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(k));
    if (rng() % 10 == 0) l.pinned = 8;
    inst.layers.push_back(l);
  }
  return inst;
}

TEST(Budget, FromFixedBits) {
  AllocationInstance inst = two_layer();
  const auto b = budget_from_fixed(inst, 3);
  EXPECT_EQ(b.size_bits, 600u);
  EXPECT_EQ(b.bitops, 1800u);
  EXPECT_THROW(budget_from_fixed(inst, 5), ConfigError);
  inst.layers[0].pinned = 8;
  const auto p = budget_from_fixed(inst, 3);
  EXPECT_EQ(p.size_bits, 800u + 300u);
  EXPECT_EQ(p.bitops, 50u * 64u + 150u * 9u);
}

TEST(Solve, TwoLayerOptimum) {
  const auto inst = two_layer();
  const auto r = solve_exact(inst, budget_from_fixed(inst, 3));
  EXPECT_EQ(r.bits, (std::vector<int>{4, 2}));
  EXPECT_DOUBLE_EQ(r.phi, 3.2);
  EXPECT_EQ(r.size_bits, 600u);
  EXPECT_EQ(r.bitops, 1400u);
  const auto e = evaluate_assignment(inst, r.bits);
  EXPECT_EQ(e.phi, r.phi);
  EXPECT_EQ(e.size_bits, 600u);
  EXPECT_EQ(e.bitops, 1400u);
}

TEST(Solve, SensitivityPenaltyFlipsOptimum) {
  auto inst = two_layer();
  inst.lambda[0][2] = 0.5;  // kind of A at 4 bits
  const auto r = solve_exact(inst, budget_from_fixed(inst, 3));
  EXPECT_EQ(r.bits, (std::vector<int>{3, 3}));
  EXPECT_DOUBLE_EQ(r.phi, 3.0);
  EXPECT_DOUBLE_EQ(evaluate_assignment(inst, {4, 2}).phi, 1.2);
  EXPECT_EQ(brute_force(inst, budget_from_fixed(inst, 3)).bits, r.bits);
}

TEST(Solve, SingleLayerGenerousBudgetTakesMaxBits) {
  AllocationInstance inst;
  inst.layers = {{"X", 10, 10, 1.0, 0, {}}};
  inst.bits = {2, 4, 8};
  inst.lambda = {{0, 0, 0}};
  const auto r = solve_exact(inst, {1'000'000, 1'000'000});
  EXPECT_EQ(r.bits, (std::vector<int>{8}));
}

TEST(Solve, ExactMaxBudgetChoosesAllMax) {
  auto inst = two_layer();
  const auto b = budget_from_fixed(inst, 4);
  EXPECT_EQ(solve_exact(inst, b).bits, (std::vector<int>{4, 4}));
  EXPECT_EQ(brute_force(inst, b).bits, (std::vector<int>{4, 4}));
}

TEST(Solve, WeightlessZeroMacLayerTakesMaxBits) {
  auto inst = two_layer();
  inst.layers.push_back({"softmax", 0, 0, 0.1, 0, {}});
  const auto r = solve_exact(inst, budget_from_fixed(inst, 3));
  EXPECT_EQ(r.bits.back(), 4);
}

TEST(Solve, InfeasibleNamesConstraint) {
  const auto inst = two_layer();
  try {
    solve_exact(inst, {399, 1'000'000});
    FAIL();
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.constraint(), "model_size");
  }
  try {
    brute_force(inst, {1'000'000, 799});
    FAIL();
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.constraint(), "bitops");
  }
}

TEST(Solve, PinnedLayersKeepPins) {
  auto inst = two_layer();
  inst.layers[1].pinned = 8;
  const auto b = budget_from_fixed(inst, 3);
  const auto r = solve_exact(inst, b);
  EXPECT_EQ(r.bits[1], 8);
  EXPECT_LE(r.size_bits, b.size_bits);
  EXPECT_THROW(evaluate_assignment(inst, {3, 4}), ConfigError);
}

TEST(Evaluate, Errors) {
  const auto inst = two_layer();
  EXPECT_THROW(evaluate_assignment(inst, {3}), ConfigError);
  EXPECT_THROW(evaluate_assignment(inst, {3, 5}), ConfigError);
}

TEST(Instance, Validation) {
  auto inst = two_layer();
  inst.lambda[1] = {0, 0};
  EXPECT_THROW(inst.validate(), ConfigError);
  inst = two_layer();
  inst.layers[0].omega = -1;
  EXPECT_THROW(inst.validate(), ConfigError);
  inst = two_layer();
  inst.bits = {3, 2, 4};
  EXPECT_THROW(inst.validate(), ConfigError);
  EXPECT_EQ(orientation_from_name(orientation_name(Orientation::Mirrored)), Orientation::Mirrored);
  EXPECT_THROW(orientation_from_name("sideways"), ConfigError);
}

TEST(Solve, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(2026);
  int checked = 0;
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    const int ref = inst.bits[rng() % inst.bits.size()];
    const auto budget = budget_from_fixed(inst, ref);
    const auto a = solve_exact(inst, budget);
    const auto b = brute_force(inst, budget);
    EXPECT_EQ(a.phi, b.phi) << t;
    EXPECT_EQ(a.bits, b.bits) << t;
    const auto e = evaluate_assignment(inst, a.bits);
    EXPECT_LE(e.size_bits, budget.size_bits);
    EXPECT_LE(e.bitops, budget.bitops);
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(Solve, MonotoneInBudget) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 30; ++t) {
    const auto inst = random_instance(rng);
    const auto b = budget_from_fixed(inst, inst.bits.front());
    const auto small = solve_exact(inst, b);
    const auto big = solve_exact(inst, {b.size_bits + 300, b.bitops + 5000});
    EXPECT_GE(big.phi, small.phi);
  }
}

TEST(Solve, OmegaScaleInvariance) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 30; ++t) {
    auto inst = random_instance(rng);
    for (auto& row : inst.lambda) std::fill(row.begin(), row.end(), 0.0);
    for (auto& l : inst.layers) l.omega = static_cast<double>(rng() % 1000) / 1000.0;
    const auto budget = budget_from_fixed(inst, inst.bits[inst.bits.size() / 2]);
    const auto base = solve_exact(inst, budget);
    auto scaled = inst;
    for (auto& l : scaled.layers) l.omega *= 4.0;  // exact power-of-two scaling keeps ties intact
    EXPECT_EQ(solve_exact(scaled, budget).bits, base.bits);
  }
}

}  // namespace
}  // namespace mixq::alloc
