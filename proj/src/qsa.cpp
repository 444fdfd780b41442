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

#include "mixq/qsa.hpp"

#include <algorithm>
#include <cmath>

namespace mixq::qsa {

const char* loss_kind_name(LossKind k) noexcept {
  return k == LossKind::CrossEntropy ? "cross_entropy" : "kl_vs_fp";
}

LossKind loss_kind_from_name(const std::string& s) {
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "kl_vs_fp") return LossKind::KLvsFullPrecision;
  throw ConfigError("unknown loss kind '" + s + "'");
}

void SweepConfig::validate() const {
  if (candidates.empty()) throw ConfigError("sensitivity sweep needs candidate bits");
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i] < 1 || candidates[i] > 8) throw ConfigError("candidate bits must lie in [1, 8]");
    if (i > 0 && candidates[i] <= candidates[i - 1]) throw ConfigError("candidate bits must be sorted and unique");
  }
  if (std::find(candidates.begin(), candidates.end(), baseline_bits) == candidates.end()) {
    throw ConfigError("baseline bits " + std::to_string(baseline_bits) + " not among the candidates");
  }
}

namespace {

void log_softmax_row(const double* z, std::size_t n, std::vector<double>& out) {
  double m = z[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, z[j]);
  double s = 0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(z[j] - m);
  const double lse = m + std::log(s);
  out.resize(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = z[j] - lse;
}

}  // namespace

template <typename T>
LossAccuracy score_logits(const Tensor<T>& logits, const EvalSet<T>& data, LossKind kind) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (data.labels.size() != b) throw DimensionError("label count does not match the batch");
  if (kind == LossKind::KLvsFullPrecision && data.fp_logits.shape() != logits.shape()) {
    throw DimensionError("KL loss needs full-precision logits of shape " + shape_to_string(logits.shape()));
  }
  LossAccuracy r;
  std::vector<double> z(c), zr(c), lp, lq;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < c; ++j) z[j] = static_cast<double>(logits[i * c + j]);
    const auto label = static_cast<std::size_t>(data.labels[i]);
    if (label >= c) throw DimensionError("label out of range");
    const std::size_t pred = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    correct += pred == label;
    log_softmax_row(z.data(), c, lq);
    if (kind == LossKind::CrossEntropy) {
      r.loss -= lq[label];
    } else {
      for (std::size_t j = 0; j < c; ++j) zr[j] = static_cast<double>(data.fp_logits[i * c + j]);
      log_softmax_row(zr.data(), c, lp);
      double kl = 0;
      for (std::size_t j = 0; j < c; ++j) kl += std::exp(lp[j]) * (lp[j] - lq[j]);
      r.loss += kl;
    }
  }
  r.loss /= static_cast<double>(b);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(b);
  return r;
}

template <typename T>
LossAccuracy evaluate(const ptq::QuantizedModel<T>& qm, const EvalSet<T>& data, LossKind kind) {
  const auto res = model::forward(qm.model, data.images, qm.plan);
  return score_logits(res.logits, data, kind);
}

namespace {

template <typename T>
LossAccuracy run_bits(const model::ToyViT<T>& fp, const ptq::CalibrationSet& calib, const EvalSet<T>& data,
                      const ptq::BitMap& bits, const ptq::PtqOptions& options, LossKind kind) {
  return evaluate(ptq::build_quantized(fp, calib, bits, options), data, kind);
}

ptq::BitMap perturbed_bits(const model::ModelConfig& c, int baseline, model::LayerKind kind, int bits) {
  ptq::BitMap m = ptq::uniform_bits(c, baseline);
  for (auto& [id, b] : m)
    if (id.kind == kind) b = bits;
  return m;
}

}  // namespace

template <typename T>
LossAccuracy baseline_loss(const model::ToyViT<T>& fp, const ptq::CalibrationSet& calib, const EvalSet<T>& data,
                           const SweepConfig& sweep, const ptq::PtqOptions& options) {
  sweep.validate();
  return run_bits(fp, calib, data, ptq::uniform_bits(fp.config, sweep.baseline_bits), options, sweep.loss);
}

template <typename T>
LossAccuracy perturbed_loss(const model::ToyViT<T>& fp, const ptq::CalibrationSet& calib, const EvalSet<T>& data,
                            const SweepConfig& sweep, const ptq::PtqOptions& options, model::LayerKind kind, int bits) {
  sweep.validate();
  if (!model::is_quantizable(kind)) throw ConfigError(std::string("layer kind ") + model::kind_name(kind) + " is not swept");
  if (std::find(sweep.candidates.begin(), sweep.candidates.end(), bits) == sweep.candidates.end()) {
    throw ConfigError("bit-width " + std::to_string(bits) + " is not a sweep candidate");
  }
  return run_bits(fp, calib, data, perturbed_bits(fp.config, sweep.baseline_bits, kind, bits), options, sweep.loss);
}

SensitivityTable sensitivity_scores(const std::map<KindBit, double>& deltas) {
  if (deltas.empty()) throw ConfigError("sensitivity scores need at least one (kind, bit) pair");
  double lo = deltas.begin()->second;
  for (const auto& [k, d] : deltas) {
    if (!std::isfinite(d)) throw NumericError("non-finite loss delta");
    lo = std::min(lo, d);
  }
  // Shift so the smallest delta sits at exactly zero. With the baseline pair in
  // the table lo <= 0 and this equals adding |lo|.
  SensitivityTable t;
  t.delta = deltas;
  double total = 0;
  std::map<KindBit, double> shifted;
  for (const auto& [k, d] : deltas) {
    const double s = d - lo;
    shifted[k] = s;
    total += s;
  }
  if (!(total > 0.0)) {
    t.uniform_fallback = true;
    for (const auto& [k, d] : deltas) t.lambda[k] = 1.0 / static_cast<double>(deltas.size());
    return t;
  }
  for (const auto& [k, s] : shifted) t.lambda[k] = s / total;
  return t;
}

template <typename T>
SensitivityTable sweep(const model::ToyViT<T>& fp, const ptq::CalibrationSet& calib, const EvalSet<T>& data,
                       const SweepConfig& cfg, const ptq::PtqOptions& options) {
  cfg.validate();
  const LossAccuracy base = baseline_loss(fp, calib, data, cfg, options);
  std::map<KindBit, double> deltas, acc;
  for (model::LayerKind kind : model::kQuantKinds) {
    for (int b : cfg.candidates) {
      if (b == cfg.baseline_bits) {
        deltas[{kind, b}] = 0.0;
        acc[{kind, b}] = 0.0;
        continue;
      }
      const LossAccuracy p = run_bits(fp, calib, data, perturbed_bits(fp.config, cfg.baseline_bits, kind, b), options, cfg.loss);
      deltas[{kind, b}] = p.loss - base.loss;
      acc[{kind, b}] = p.accuracy - base.accuracy;
    }
  }
  SensitivityTable t = sensitivity_scores(deltas);
  t.accuracy_delta = std::move(acc);
  t.baseline_loss = base.loss;
  t.baseline_accuracy = base.accuracy;
  return t;
}

#define MIXQ_INSTANTIATE(T)                                                                                         \
  template LossAccuracy score_logits(const Tensor<T>&, const EvalSet<T>&, LossKind);                                \
  template LossAccuracy evaluate(const ptq::QuantizedModel<T>&, const EvalSet<T>&, LossKind);                       \
  template LossAccuracy baseline_loss(const model::ToyViT<T>&, const ptq::CalibrationSet&, const EvalSet<T>&,       \
                                      const SweepConfig&, const ptq::PtqOptions&);                                  \
  template LossAccuracy perturbed_loss(const model::ToyViT<T>&, const ptq::CalibrationSet&, const EvalSet<T>&,      \
                                       const SweepConfig&, const ptq::PtqOptions&, model::LayerKind, int);          \
  template SensitivityTable sweep(const model::ToyViT<T>&, const ptq::CalibrationSet&, const EvalSet<T>&,           \
                                  const SweepConfig&, const ptq::PtqOptions&);

MIXQ_INSTANTIATE(float)
MIXQ_INSTANTIATE(double)
#undef MIXQ_INSTANTIATE

}  // namespace mixq::qsa
