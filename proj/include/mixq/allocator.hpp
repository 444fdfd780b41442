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
#include <optional>
#include <string>
#include <vector>

namespace mixq::alloc {

/// How the sensitivity term enters the objective. Verbatim subtracts
/// Lambda(kind, b) * b; Mirrored subtracts Lambda(kind, b) * (bmax + bmin - b),
/// so sensitive kinds are pushed toward high bit-widths instead.
enum class Orientation { Verbatim, Mirrored };

const char* orientation_name(Orientation o) noexcept;
Orientation orientation_from_name(const std::string& s);

struct AllocLayer {
  std::string name;
  std::uint64_t params = 0;  // |w|
  std::uint64_t macs = 0;
  double omega = 0;
  std::size_t kind = 0;  // row of the lambda table
  std::optional<int> pinned;
};

struct AllocationInstance {
  std::vector<AllocLayer> layers;    // registry order
  std::vector<int> bits;             // candidate set, sorted ascending
  std::vector<std::vector<double>> lambda;  // [kind][index into bits]
  Orientation orientation = Orientation::Verbatim;

  /// Throws ConfigError on malformed tables or negative scores.
  void validate() const;
};

struct Budget {
  std::uint64_t size_bits = 0;  // sum |w| * b
  std::uint64_t bitops = 0;     // sum MAC * b^2
};

struct BitAssignment {
  std::vector<int> bits;  // one per instance layer, pins included
  double phi = 0;
  std::uint64_t size_bits = 0;
  std::uint64_t bitops = 0;
};

struct Evaluation {
  double phi = 0;
  std::uint64_t size_bits = 0;
  std::uint64_t bitops = 0;
};

/// Reference budget of the model with every free layer at `fixed_bits` and
/// pinned layers at their pins.
Budget budget_from_fixed(const AllocationInstance& inst, int fixed_bits);

/// Objective and both costs from scratch, summed in layer order. Throws
/// ConfigError for a bit outside the candidate set or a violated pin.
Evaluation evaluate_assignment(const AllocationInstance& inst, const std::vector<int>& bits);

/// Global optimum by depth-first branch and bound. Among assignments with the
/// same objective the lexicographically smallest bit vector wins.
/// Throws InfeasibleError naming the constraint when even the minimum bits
/// violate a budget.
BitAssignment solve_exact(const AllocationInstance& inst, const Budget& budget);

/// Exhaustive enumeration with the same objective and tie-break.
BitAssignment brute_force(const AllocationInstance& inst, const Budget& budget,
                          std::uint64_t max_configurations = 10'000'000);

}  // namespace mixq::alloc
