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

#include "mixq/crl.hpp"

#include <algorithm>
#include <cmath>

namespace mixq::crl {

void ClipPolicy::validate() const {
  if (!(k > 0.0)) throw ConfigError("clip policy: k must be positive");
}

namespace {

void mean_std(std::span<const double> v, double& mu, double& sigma) {
  double sum = 0;
  for (double x : v) sum += x;
  mu = sum / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mu) * (x - mu);
  sigma = std::sqrt(ss / static_cast<double>(v.size()));
}

void check_sizes(std::size_t d, std::span<const double> a, std::span<const double> b, std::span<const double> c) {
  if (a.size() != d || b.size() != d || c.size() != d) {
    throw DimensionError("reparameterization vectors must have " + std::to_string(d) + " channels");
  }
}

}  // namespace

ClipResult clip_channel_params(std::span<const double> s, std::span<const double> z, const ClipPolicy& policy) {
  policy.validate();
  if (s.empty() || s.size() != z.size()) throw DimensionError("scale and zero-point must be non-empty and equal length");
  double smallest_pos = std::numeric_limits<double>::infinity();
  for (double x : s) {
    if (!(x > 0.0)) throw ConfigError("channel scales must be positive");
    smallest_pos = std::min(smallest_pos, x);
  }

  ClipResult r;
  mean_std(s, r.mu_s, r.sigma_s);
  mean_std(z, r.mu_z, r.sigma_z);
  const bool unbounded = std::isinf(policy.k);
  const double inf = std::numeric_limits<double>::infinity();
  r.s_lo = unbounded ? -inf : r.mu_s - policy.k * r.sigma_s;
  r.s_hi = unbounded ? inf : r.mu_s + policy.k * r.sigma_s;
  r.z_lo = unbounded ? -inf : r.mu_z - policy.k * r.sigma_z;
  r.z_hi = unbounded ? inf : r.mu_z + policy.k * r.sigma_z;
  if (r.s_lo <= 0.0) r.s_lo = smallest_pos;

  const std::size_t d = s.size();
  r.s_hat.resize(d);
  r.z_hat.resize(d);
  r.v1.resize(d);
  r.v2.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    double sh = s[i], zh = z[i];
    if (sh < r.s_lo) sh = r.s_lo, ++r.s_clipped_low;
    if (sh > r.s_hi) sh = r.s_hi, ++r.s_clipped_high;
    if (zh < r.z_lo) zh = r.z_lo, ++r.z_clipped_low;
    if (zh > r.z_hi) zh = r.z_hi, ++r.z_clipped_high;
    r.s_hat[i] = sh;
    r.z_hat[i] = zh;
    r.v1[i] = sh == s[i] ? 1.0 : s[i] / sh;
    r.v2[i] = z[i] - zh;
  }
  return r;
}

template <typename T>
model::Norm<T> fold_into_layernorm(const model::Norm<T>& ln, std::span<const double> s, std::span<const double> v1,
                                   std::span<const double> v2) {
  const std::size_t d = ln.gamma.size();
  check_sizes(d, s, v1, v2);
  model::Norm<T> out = ln;
  for (std::size_t i = 0; i < d; ++i) {
    if (v1[i] == 1.0 && v2[i] == 0.0) continue;
    out.gamma[i] = static_cast<T>(static_cast<double>(ln.gamma[i]) / v1[i]);
    out.beta[i] = static_cast<T>((static_cast<double>(ln.beta[i]) + s[i] * v2[i]) / v1[i]);
  }
  return out;
}

template <typename T>
model::Linear<T> fold_into_next_linear(const model::Linear<T>& lin, std::span<const double> s,
                                       std::span<const double> v1, std::span<const double> v2) {
  const std::size_t d = lin.weight.rows(), m = lin.weight.cols();
  check_sizes(d, s, v1, v2);
  if (lin.bias.size() != m) throw DimensionError("bias length does not match weight columns");
  model::Linear<T> out = lin;
  for (std::size_t j = 0; j < m; ++j) {
    double shift = 0.0;
    bool touched = false;
    for (std::size_t i = 0; i < d; ++i) {
      if (v2[i] != 0.0) {
        shift += s[i] * v2[i] * static_cast<double>(lin.weight.at(i, j));
        touched = true;
      }
    }
    if (touched) out.bias[j] = static_cast<T>(static_cast<double>(lin.bias[j]) - shift);
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (v1[i] == 1.0) continue;
    for (std::size_t j = 0; j < m; ++j)
      out.weight.at(i, j) = static_cast<T>(v1[i] * static_cast<double>(lin.weight.at(i, j)));
  }
  return out;
}

template <typename T>
CrlResult<T> apply_crl(const model::ToyViT<T>& model, const std::map<model::LayerId, quant::CalibrationStats>& ln_stats,
                       const ClipPolicy& policy, const std::map<model::LayerId, int>& bits, double percentile) {
  using model::LayerId;
  using model::LayerKind;
  policy.validate();
  CrlResult<T> out{model, {}, {}};
  const std::size_t d = model.config.embed_dim;
  for (int l = 0; l < model.config.num_blocks; ++l) {
    for (auto [norm_kind, next_kind] : {std::pair{LayerKind::LN1, LayerKind::QKV}, std::pair{LayerKind::LN2, LayerKind::FC1}}) {
      const LayerId norm{l, norm_kind}, next{l, next_kind};
      auto st = ln_stats.find(norm);
      if (st == ln_stats.end() || !st->second.observed()) {
        throw ConfigError("no calibration statistics for " + norm.name());
      }
      if (st->second.channels() != d) throw DimensionError("statistics for " + norm.name() + " have wrong channel count");
      auto b = bits.find(next);
      if (b == bits.end()) throw ConfigError("no bit-width given for " + next.name());

      const quant::QuantParams q = quant::calibrate_uniform(st->second, b->second, quant::Granularity::PerChannel, percentile);
      ReparamRecord rec;
      rec.norm = norm;
      rec.next = next;
      rec.bits = b->second;
      rec.s = q.scale;
      rec.z = q.zero_point;
      rec.clip = clip_channel_params(rec.s, rec.z, policy);

      auto& blk = out.model.blocks[l];
      model::Norm<T>& ln = norm_kind == LayerKind::LN1 ? blk.ln1 : blk.ln2;
      model::Linear<T>& lin = next_kind == LayerKind::QKV ? blk.qkv : blk.fc1;
      ln = fold_into_layernorm(ln, rec.s, rec.clip.v1, rec.clip.v2);
      lin = fold_into_next_linear(lin, rec.s, rec.clip.v1, rec.clip.v2);
      rec.gamma_hat.assign(ln.gamma.data().begin(), ln.gamma.data().end());
      rec.beta_hat.assign(ln.beta.data().begin(), ln.beta.data().end());
      rec.bias_hat.assign(lin.bias.data().begin(), lin.bias.data().end());

      quant::QuantParams act = q;
      act.scale = rec.clip.s_hat;
      for (std::size_t c = 0; c < d; ++c) {
        act.zero_point[c] = std::clamp(quant::round_half_away(rec.clip.z_hat[c]), 0.0, act.qmax()) + 0.0;
      }
      out.inputs.emplace(next, std::move(act));
      out.records.push_back(std::move(rec));
    }
  }
  return out;
}

#define MIXQ_INSTANTIATE(T)                                                                                           \
  template model::Norm<T> fold_into_layernorm(const model::Norm<T>&, std::span<const double>, std::span<const double>, \
                                              std::span<const double>);                                               \
  template model::Linear<T> fold_into_next_linear(const model::Linear<T>&, std::span<const double>,                   \
                                                  std::span<const double>, std::span<const double>);                  \
  template CrlResult<T> apply_crl(const model::ToyViT<T>&, const std::map<model::LayerId, quant::CalibrationStats>&,   \
                                  const ClipPolicy&, const std::map<model::LayerId, int>&, double);

MIXQ_INSTANTIATE(float)
MIXQ_INSTANTIATE(double)
#undef MIXQ_INSTANTIATE

}  // namespace mixq::crl
