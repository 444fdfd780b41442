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

#include "mixq/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mixq/error.hpp"

namespace mixq::alloc {

const char* orientation_name(Orientation o) noexcept { return o == Orientation::Verbatim ? "verbatim" : "mirrored"; }

Orientation orientation_from_name(const std::string& s) {
  if (s == "verbatim") return Orientation::Verbatim;
  if (s == "mirrored") return Orientation::Mirrored;
  throw ConfigError("unknown lambda orientation '" + s + "'");
}

void AllocationInstance::validate() const {
  if (layers.empty()) throw ConfigError("allocation instance has no layers");
  if (bits.empty()) throw ConfigError("allocation instance has no candidate bits");
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] < 1 || bits[i] > 16) throw ConfigError("candidate bits must lie in [1, 16]");
    if (i > 0 && bits[i] <= bits[i - 1]) throw ConfigError("candidate bits must be sorted and unique");
  }
  for (const auto& row : lambda) {
    if (row.size() != bits.size()) throw ConfigError("lambda table width does not match the candidate set");
    for (double v : row)
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("lambda entries must be finite and non-negative");
  }
  for (const auto& l : layers) {
    if (l.kind >= lambda.size()) throw ConfigError("layer " + l.name + " refers to a missing lambda row");
    if (!(l.omega >= 0.0) || !std::isfinite(l.omega)) throw ConfigError("omega of " + l.name + " must be non-negative");
    if (l.pinned && (*l.pinned < 1 || *l.pinned > 16)) throw ConfigError("pinned bits of " + l.name + " out of range");
  }
}

namespace {

std::size_t bit_index(const AllocationInstance& inst, int b) {
  auto it = std::find(inst.bits.begin(), inst.bits.end(), b);
  return it == inst.bits.end() ? inst.bits.size() : static_cast<std::size_t>(it - inst.bits.begin());
}

double layer_value(const AllocationInstance& inst, const AllocLayer& l, int b) {
  double v = l.omega * b;
  const std::size_t j = bit_index(inst, b);
  if (j < inst.bits.size()) {
    const double lam = inst.lambda[l.kind][j];
    const int factor = inst.orientation == Orientation::Verbatim ? b : inst.bits.front() + inst.bits.back() - b;
    v -= lam * factor;
  }
  return v;
}

std::uint64_t size_cost(const AllocLayer& l, int b) { return l.params * static_cast<std::uint64_t>(b); }
std::uint64_t ops_cost(const AllocLayer& l, int b) { return l.macs * static_cast<std::uint64_t>(b) * static_cast<std::uint64_t>(b); }

struct Prepared {
  const AllocationInstance* inst = nullptr;
  std::vector<std::size_t> free;  // registry indices of decision layers
  std::uint64_t cap_size = 0, cap_ops = 0;
};

Prepared prepare(const AllocationInstance& inst, const Budget& budget) {
  inst.validate();
  Prepared p;
  p.inst = &inst;
  std::uint64_t pin_size = 0, pin_ops = 0, min_size = 0, min_ops = 0;
  for (std::size_t i = 0; i < inst.layers.size(); ++i) {
    const auto& l = inst.layers[i];
    if (l.pinned) {
      pin_size += size_cost(l, *l.pinned);
      pin_ops += ops_cost(l, *l.pinned);
    } else {
      p.free.push_back(i);
      min_size += size_cost(l, inst.bits.front());
      min_ops += ops_cost(l, inst.bits.front());
    }
  }
  if (pin_size + min_size > budget.size_bits) {
    throw InfeasibleError("minimum bit-widths need " + std::to_string(pin_size + min_size) +
                              " weight bits, budget is " + std::to_string(budget.size_bits),
                          "model_size");
  }
  if (pin_ops + min_ops > budget.bitops) {
    throw InfeasibleError("minimum bit-widths need " + std::to_string(pin_ops + min_ops) + " BitOps, budget is " +
                              std::to_string(budget.bitops),
                          "bitops");
  }
  p.cap_size = budget.size_bits - pin_size;
  p.cap_ops = budget.bitops - pin_ops;
  return p;
}

// Leaf comparison shared by both solvers.
bool better(double phi, const std::vector<int>& bits, double best_phi, const std::vector<int>& best_bits) {
  if (best_bits.empty()) return true;
  if (phi != best_phi) return phi > best_phi;
  return bits < best_bits;
}

BitAssignment finish(const AllocationInstance& inst, std::vector<int> bits) {
  const Evaluation e = evaluate_assignment(inst, bits);
  return {std::move(bits), e.phi, e.size_bits, e.bitops};
}

// Upper bound of one single-constraint multiple-choice knapsack LP relaxation.
class LpBound {
 public:
  struct Option {
    double w, v;
  };

  double bound(const std::vector<std::vector<Option>>& classes, double capacity) {
    double base_v = 0, base_w = 0;
    incs_.clear();
    for (const auto& opts : classes) {
      sorted_ = opts;
      std::sort(sorted_.begin(), sorted_.end(),
                [](const Option& a, const Option& b) { return a.w < b.w || (a.w == b.w && a.v > b.v); });
      hull_.clear();
      for (const auto& o : sorted_) {
        if (!hull_.empty() && o.v <= hull_.back().v) continue;
        if (!hull_.empty() && o.w == hull_.back().w) continue;
        while (hull_.size() >= 2) {
          const auto& a = hull_[hull_.size() - 2];
          const auto& b = hull_.back();
          if ((b.v - a.v) * (o.w - b.w) <= (o.v - b.v) * (b.w - a.w)) hull_.pop_back();
          else break;
        }
        hull_.push_back(o);
      }
      base_v += hull_.front().v;
      base_w += hull_.front().w;
      for (std::size_t k = 1; k < hull_.size(); ++k)
        incs_.push_back({hull_[k].w - hull_[k - 1].w, hull_[k].v - hull_[k - 1].v});
    }
    if (base_w > capacity) return -std::numeric_limits<double>::infinity();
    std::sort(incs_.begin(), incs_.end(), [](const Option& a, const Option& b) { return a.v * b.w > b.v * a.w; });
    double cap = capacity - base_w, v = base_v;
    for (const auto& inc : incs_) {
      if (inc.w <= cap) {
        cap -= inc.w;
        v += inc.v;
      } else {
        v += inc.v * (cap / inc.w);
        break;
      }
    }
    return v;
  }

 private:
  std::vector<Option> sorted_, hull_, incs_;
};

class BranchAndBound {
 public:
  explicit BranchAndBound(const Prepared& p) : p_(p), inst_(*p.inst) {
    order_ = p.free;
    const double span = inst_.bits.back() - inst_.bits.front();
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
      return static_cast<double>(inst_.layers[a].params) * span > static_cast<double>(inst_.layers[b].params) * span;
    });
    const std::size_t n = order_.size(), nb = inst_.bits.size();
    value_.assign(n, std::vector<double>(nb));
    for (std::size_t d = 0; d < n; ++d)
      for (std::size_t j = 0; j < nb; ++j) value_[d][j] = layer_value(inst_, inst_.layers[order_[d]], inst_.bits[j]);
    suffix_min_size_.assign(n + 1, 0);
    suffix_min_ops_.assign(n + 1, 0);
    for (std::size_t d = n; d-- > 0;) {
      const auto& l = inst_.layers[order_[d]];
      suffix_min_size_[d] = suffix_min_size_[d + 1] + size_cost(l, inst_.bits.front());
      suffix_min_ops_[d] = suffix_min_ops_[d + 1] + ops_cost(l, inst_.bits.front());
    }
    choice_.assign(n, 0);
    current_.assign(inst_.layers.size(), 0);
    for (std::size_t i = 0; i < inst_.layers.size(); ++i)
      if (inst_.layers[i].pinned) current_[i] = *inst_.layers[i].pinned;
  }

  BitAssignment run() {
    // Pinned layers are constant terms of every leaf objective.
    double pinned = 0.0;
    for (const auto& l : inst_.layers)
      if (l.pinned) pinned += layer_value(inst_, l, *l.pinned);
    dfs(0, pinned, 0, 0);
    return finish(inst_, best_bits_);
  }

 private:
  double upper_bound(std::size_t depth, std::uint64_t used_size, std::uint64_t used_ops) {
    const std::size_t n = order_.size(), nb = inst_.bits.size();
    classes_size_.resize(n - depth);
    classes_ops_.resize(n - depth);
    for (std::size_t d = depth; d < n; ++d) {
      const auto& l = inst_.layers[order_[d]];
      auto& cs = classes_size_[d - depth];
      auto& co = classes_ops_[d - depth];
      cs.resize(nb);
      co.resize(nb);
      for (std::size_t j = 0; j < nb; ++j) {
        cs[j] = {static_cast<double>(size_cost(l, inst_.bits[j])), value_[d][j]};
        co[j] = {static_cast<double>(ops_cost(l, inst_.bits[j])), value_[d][j]};
      }
    }
    const double a = lp_.bound(classes_size_, static_cast<double>(p_.cap_size - used_size));
    const double b = lp_.bound(classes_ops_, static_cast<double>(p_.cap_ops - used_ops));
    return std::min(a, b);
  }

  void dfs(std::size_t depth, double partial, std::uint64_t used_size, std::uint64_t used_ops) {
    const std::size_t n = order_.size();
    if (depth == n) {
      for (std::size_t d = 0; d < n; ++d) current_[order_[d]] = inst_.bits[choice_[d]];
      const double phi = evaluate_assignment(inst_, current_).phi;
      if (better(phi, current_, best_phi_, best_bits_)) {
        best_phi_ = phi;
        best_bits_ = current_;
      }
      return;
    }
    if (!best_bits_.empty()) {
      const double ub = partial + upper_bound(depth, used_size, used_ops);
      const double tol = 1e-9 * std::max(1.0, std::abs(best_phi_));
      if (ub < best_phi_ - tol) return;
    }
    const auto& l = inst_.layers[order_[depth]];
    const std::size_t nb = inst_.bits.size();
    std::vector<std::size_t> opts(nb);
    std::iota(opts.begin(), opts.end(), 0);
    std::stable_sort(opts.begin(), opts.end(),
                     [&](std::size_t a, std::size_t b) { return value_[depth][a] > value_[depth][b]; });
    for (std::size_t j : opts) {
      const std::uint64_t s = used_size + size_cost(l, inst_.bits[j]);
      const std::uint64_t o = used_ops + ops_cost(l, inst_.bits[j]);
      if (s + suffix_min_size_[depth + 1] > p_.cap_size || o + suffix_min_ops_[depth + 1] > p_.cap_ops) continue;
      choice_[depth] = j;
      dfs(depth + 1, partial + value_[depth][j], s, o);
    }
  }

  const Prepared& p_;
  const AllocationInstance& inst_;
  std::vector<std::size_t> order_;
  std::vector<std::vector<double>> value_;
  std::vector<std::uint64_t> suffix_min_size_, suffix_min_ops_;
  std::vector<std::size_t> choice_;
  std::vector<int> current_;
  std::vector<int> best_bits_;
  double best_phi_ = -std::numeric_limits<double>::infinity();
  LpBound lp_;
  std::vector<std::vector<LpBound::Option>> classes_size_, classes_ops_;
};

}  // namespace

Budget budget_from_fixed(const AllocationInstance& inst, int fixed_bits) {
  inst.validate();
  if (bit_index(inst, fixed_bits) == inst.bits.size()) {
    throw ConfigError("reference bits " + std::to_string(fixed_bits) + " are not a candidate bit-width");
  }
  Budget b;
  for (const auto& l : inst.layers) {
    const int bits = l.pinned ? *l.pinned : fixed_bits;
    b.size_bits += size_cost(l, bits);
    b.bitops += ops_cost(l, bits);
  }
  return b;
}

Evaluation evaluate_assignment(const AllocationInstance& inst, const std::vector<int>& bits) {
  if (bits.size() != inst.layers.size()) {
    throw ConfigError("assignment has " + std::to_string(bits.size()) + " entries for " +
                      std::to_string(inst.layers.size()) + " layers");
  }
  Evaluation e;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const auto& l = inst.layers[i];
    if (l.pinned) {
      if (bits[i] != *l.pinned) throw ConfigError("layer " + l.name + " is pinned to " + std::to_string(*l.pinned) + " bits");
    } else if (bit_index(inst, bits[i]) == inst.bits.size()) {
      throw ConfigError("bit-width " + std::to_string(bits[i]) + " of " + l.name + " is not a candidate");
    }
    e.phi += layer_value(inst, l, bits[i]);
    e.size_bits += size_cost(l, bits[i]);
    e.bitops += ops_cost(l, bits[i]);
  }
  return e;
}

BitAssignment solve_exact(const AllocationInstance& inst, const Budget& budget) {
  const Prepared p = prepare(inst, budget);
  return BranchAndBound(p).run();
}

BitAssignment brute_force(const AllocationInstance& inst, const Budget& budget, std::uint64_t max_configurations) {
  const Prepared p = prepare(inst, budget);
  const std::size_t nb = inst.bits.size(), n = p.free.size();
  double total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= static_cast<double>(nb);
  if (total > static_cast<double>(max_configurations)) {
    throw ConfigError("instance too large for exhaustive enumeration");
  }
  std::vector<std::size_t> idx(n, 0);
  std::vector<int> bits(inst.layers.size());
  for (std::size_t i = 0; i < inst.layers.size(); ++i)
    if (inst.layers[i].pinned) bits[i] = *inst.layers[i].pinned;
  std::vector<int> best;
  double best_phi = -std::numeric_limits<double>::infinity();
  for (;;) {
    std::uint64_t size = 0, ops = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto& l = inst.layers[p.free[k]];
      bits[p.free[k]] = inst.bits[idx[k]];
      size += size_cost(l, inst.bits[idx[k]]);
      ops += ops_cost(l, inst.bits[idx[k]]);
    }
    if (size <= p.cap_size && ops <= p.cap_ops) {
      const double phi = evaluate_assignment(inst, bits).phi;
      if (better(phi, bits, best_phi, best)) {
        best_phi = phi;
        best = bits;
      }
    }
    std::size_t k = n;
    while (k > 0) {
      --k;
      if (++idx[k] < nb) break;
      idx[k] = 0;
      if (k == 0) {
        k = n + 1;
        break;
      }
    }
    if (n == 0 || k == n + 1) break;
  }
  return finish(inst, best);
}

}  // namespace mixq::alloc
