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

#include "mixq/lrp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mixq::lrp {

using ad::Op;
using ad::Var;

template <typename T>
const Tensor<T>& RelevanceState<T>::operator[](Var v) const {
  if (!has(v)) throw Error(ErrorCode::Internal, "no relevance recorded for node " + std::to_string(v.id));
  return *relevance[v.id];
}

namespace {

template <typename T>
double tensor_sum(const Tensor<T>& t) {
  double s = 0;
  for (T v : t.data()) s += static_cast<double>(v);
  return s;
}

template <typename T>
bool is_weight(const ad::Graph<T>& g, Var v) {
  for (;;) {
    const auto& n = g.node(v);
    if (n.parameter) return true;
    if (n.op == Op::StraightThrough || n.op == Op::Tap || n.op == Op::Transpose) {
      v = n.inputs[0];
      continue;
    }
    return false;
  }
}

template <typename T>
class Propagator {
 public:
  Propagator(const ad::Graph<T>& g, RelevanceState<T>& st) : g_(g), st_(st) {}

  void run(Var out) {
    for (std::uint32_t id = out.id + 1; id-- > 0;) {
      const Var v{id};
      if (!st_.has(v)) continue;
      step(v);
    }
  }

 private:
  void send(StepRecord& rec, Var to, Tensor<T> r) {
    rec.distributed += tensor_sum(r);
    auto& slot = st_.relevance[to.id];
    if (!slot) {
      slot = std::move(r);
      return;
    }
    auto dst = slot->data();
    auto src = r.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  // out[i, j] = sum_k a[i, k] b[k, j]
  void matmul_rule(StepRecord& rec, const ad::Node<T>& n, const Tensor<T>& r) {
    const Var va = n.inputs[0], vb = n.inputs[1];
    const auto& a = g_.value(va);
    const auto& b = g_.value(vb);
    const bool wa = is_weight(g_, va), wb = is_weight(g_, vb);
    double fa = 0.5, fb = 0.5;
    if (wb && !wa) fa = 1.0, fb = 0.0;
    if (wa && !wb) fa = 0.0, fb = 1.0;
    const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
    // Row-major a and column-major b in double so the inner loops run contiguously.
    std::vector<double> ad(a.size()), bt(b.size()), c(k);
    for (std::size_t i = 0; i < a.size(); ++i) ad[i] = static_cast<double>(a[i]);
    for (std::size_t q = 0; q < k; ++q)
      for (std::size_t j = 0; j < nn; ++j) bt[j * k + q] = static_cast<double>(b[q * nn + j]);
    std::vector<double> ra(fa != 0.0 ? a.size() : 0), rbt(fb != 0.0 ? b.size() : 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = ad.data() + i * k;
      for (std::size_t j = 0; j < nn; ++j) {
        const double rij = static_cast<double>(r[i * nn + j]);
        if (rij == 0.0) continue;
        const double* bj = bt.data() + j * k;
        double p4[4] = {0, 0, 0, 0};
        std::size_t q = 0;
        for (; q + 4 <= k; q += 4)
          for (std::size_t u = 0; u < 4; ++u) p4[u] += c[q + u] = std::max(0.0, ai[q + u] * bj[q + u]);
        for (; q < k; ++q) p4[0] += c[q] = std::max(0.0, ai[q] * bj[q]);
        const double pos = (p4[0] + p4[1]) + (p4[2] + p4[3]);
        if (pos == 0.0) {
          rec.dropped += rij;
          ++rec.dropped_units;
          continue;
        }
        rec.incoming += rij;
        const double unit = rij / pos;
        if (fa != 0.0) {
          double* out = ra.data() + i * k;
          for (std::size_t q = 0; q < k; ++q) out[q] += fa * (c[q] * unit);
        }
        if (fb != 0.0) {
          double* out = rbt.data() + j * k;
          for (std::size_t q = 0; q < k; ++q) out[q] += fb * (c[q] * unit);
        }
      }
    }
    if (fa != 0.0) {
      Tensor<T> t(a.shape());
      for (std::size_t i = 0; i < ra.size(); ++i) t[i] = static_cast<T>(ra[i]);
      send(rec, va, std::move(t));
    }
    if (fb != 0.0) {
      Tensor<T> t(b.shape());
      for (std::size_t q = 0; q < k; ++q)
        for (std::size_t j = 0; j < nn; ++j) t[q * nn + j] = static_cast<T>(rbt[j * k + q]);
      send(rec, vb, std::move(t));
    }
  }

  // Positive-subset rule for a pooling sum over rows (mean_rows) or all elements (sum).
  void pooling_rule(StepRecord& rec, const ad::Node<T>& n, const Tensor<T>& r, bool per_column) {
    const Var vx = n.inputs[0];
    const auto& x = g_.value(vx);
    Tensor<T> rx(x.shape());
    const std::size_t cols = per_column ? x.dim(1) : 1;
    const std::size_t rows = x.size() / cols;
    for (std::size_t j = 0; j < cols; ++j) {
      const double rj = static_cast<double>(r[j]);
      if (rj == 0.0) continue;
      double pos = 0;
      for (std::size_t i = 0; i < rows; ++i) pos += std::max(0.0, static_cast<double>(x[i * cols + j]));
      if (pos == 0.0) {
        rec.dropped += rj;
        ++rec.dropped_units;
        continue;
      }
      rec.incoming += rj;
      for (std::size_t i = 0; i < rows; ++i) {
        const double xi = static_cast<double>(x[i * cols + j]);
        if (xi > 0) rx[i * cols + j] += static_cast<T>(rj * xi / pos);
      }
    }
    send(rec, vx, std::move(rx));
  }

  void step(Var v) {
    const auto& n = g_.node(v);
    const Tensor<T>& r = *st_.relevance[v.id];
    StepRecord rec;
    rec.node = v;
    rec.op = n.op;
    switch (n.op) {
      case Op::Leaf:
        return;  // terminal: relevance stays with the leaf
      case Op::Matmul:
        matmul_rule(rec, n, r);
        break;
      case Op::MeanRows:
        pooling_rule(rec, n, r, true);
        break;
      case Op::Sum:
        pooling_rule(rec, n, r, false);
        break;
      case Op::Transpose:
        rec.incoming = tensor_sum(r);
        send(rec, n.inputs[0], r.transposed());
        break;
      case Op::Add: {
        rec.incoming = tensor_sum(r);
        const auto& a = g_.value(n.inputs[0]);
        const auto& b = g_.value(n.inputs[1]);
        Tensor<T> ra(r.shape()), rb(r.shape());
        for (std::size_t i = 0; i < r.size(); ++i) {
          const double aa = std::abs(static_cast<double>(a[i])), ab = std::abs(static_cast<double>(b[i]));
          const double tot = aa + ab;
          const double fa = tot > 0 ? aa / tot : 0.5;
          const double ri = static_cast<double>(r[i]);
          ra[i] = static_cast<T>(ri * fa);
          rb[i] = static_cast<T>(ri - static_cast<double>(ra[i]));
        }
        send(rec, n.inputs[0], std::move(ra));
        send(rec, n.inputs[1], std::move(rb));
        break;
      }
      case Op::Mul: {
        rec.incoming = tensor_sum(r);
        Tensor<T> ra(r.shape()), rb(r.shape());
        for (std::size_t i = 0; i < r.size(); ++i) {
          ra[i] = r[i] / T{2};
          rb[i] = r[i] - ra[i];
        }
        send(rec, n.inputs[0], std::move(ra));
        send(rec, n.inputs[1], std::move(rb));
        break;
      }
      case Op::SliceCols: {
        rec.incoming = tensor_sum(r);
        const auto& x = g_.value(n.inputs[0]);
        Tensor<T> rx(x.shape());
        const std::size_t count = r.dim(1), width = x.dim(1);
        for (std::size_t row = 0; row < x.dim(0); ++row)
          std::copy_n(r.ptr() + row * count, count, rx.ptr() + row * width + n.offset);
        send(rec, n.inputs[0], std::move(rx));
        break;
      }
      case Op::ConcatCols: {
        rec.incoming = tensor_sum(r);
        const std::size_t rows = r.dim(0), total = r.dim(1);
        std::size_t col = 0;
        for (Var in : n.inputs) {
          const std::size_t w = g_.value(in).dim(1);
          Tensor<T> part(Shape{rows, w});
          for (std::size_t row = 0; row < rows; ++row) std::copy_n(r.ptr() + row * total + col, w, part.ptr() + row * w);
          send(rec, in, std::move(part));
          col += w;
        }
        break;
      }
      case Op::AddRow:
      case Op::Scale:
      case Op::SoftmaxRows:
      case Op::Gelu:
      case Op::LayerNorm:
      case Op::Tap:
      case Op::StraightThrough:
        rec.incoming = tensor_sum(r);
        send(rec, n.inputs[0], r);
        break;
    }
    st_.steps.push_back(rec);
  }

  const ad::Graph<T>& g_;
  RelevanceState<T>& st_;
};

}  // namespace

template <typename T>
RelevanceState<T> propagate_relevance(const model::Trace<T>& trace, std::size_t target_class) {
  const auto& logits = trace.graph.value(trace.logits);
  if (target_class >= logits.size()) {
    throw DimensionError("class index " + std::to_string(target_class) + " out of range for " +
                         std::to_string(logits.size()) + " classes");
  }
  RelevanceState<T> st;
  st.target_class = target_class;
  st.relevance.resize(trace.graph.size());
  Tensor<T> seed(logits.shape());
  seed[target_class] = T{1};
  st.relevance[trace.logits.id] = std::move(seed);
  Propagator<T>(trace.graph, st).run(trace.logits);
  return st;
}

template <typename T>
RelevanceState<T> propagate_relevance(const model::ToyViT<T>& model, const Tensor<T>& image, std::size_t target_class) {
  model::ForwardOptions<T> opt;
  opt.capture = true;
  const auto trace = model::trace_sample(model, image, model::QuantPlan{}, opt);
  return propagate_relevance(trace, target_class);
}

template <typename T>
Tensor<T> relevance_map(std::span<const Tensor<T>> grads, std::span<const Tensor<T>> relevance) {
  if (grads.empty() || grads.size() != relevance.size()) {
    throw DimensionError("relevance map needs one gradient and one relevance tensor per head");
  }
  const Shape& shape = grads[0].shape();
  Tensor<T> s(shape);
  for (std::size_t h = 0; h < grads.size(); ++h) {
    if (grads[h].shape() != shape || relevance[h].shape() != shape) {
      throw DimensionError("relevance map shape mismatch: " + shape_to_string(grads[h].shape()) + " vs " +
                           shape_to_string(relevance[h].shape()));
    }
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += std::max(T{0}, grads[h][i] * relevance[h][i]);
  }
  if (grads.size() > 1) {
    const T inv = T{1} / static_cast<T>(grads.size());
    for (auto& v : s.data()) v *= inv;
  }
  return s;
}

template <typename T>
ContributionTable contribution_scores(const model::ToyViT<T>& model, const Tensor<T>& images) {
  if (images.rank() != 4 || images.dim(0) == 0) throw DimensionError("contribution scores need a non-empty image batch");
  const auto registry = model::layer_registry(model.config);
  ContributionTable table;
  for (const auto& info : registry) table.scores[info.id] = 0.0;
  model::ForwardOptions<T> opt;
  opt.capture = true;
  opt.input_requires_grad = true;
  const std::size_t count = images.dim(0);
  for (std::size_t b = 0; b < count; ++b) {
    const auto trace = model::trace_sample(model, model::image_at(images, b), model::QuantPlan{}, opt);
    const auto& logits = trace.graph.value(trace.logits);
    const std::size_t cls = static_cast<std::size_t>(
        std::distance(logits.data().begin(), std::max_element(logits.data().begin(), logits.data().end())));
    Tensor<T> seed(logits.shape());
    seed[cls] = T{1};
    const auto grads = trace.graph.backward(trace.logits, seed);
    const auto rel = propagate_relevance(trace, cls);
    for (const auto& info : registry) {
      const auto& taps = trace.taps.at(info.id).output;
      std::vector<Tensor<T>> g, r;
      for (Var v : taps) {
        g.push_back(grads.has(v) ? grads[v] : Tensor<T>(trace.graph.value(v).shape()));
        r.push_back(rel.has(v) ? rel[v] : Tensor<T>(trace.graph.value(v).shape()));
      }
      const Tensor<T> s = relevance_map<T>(g, r);
      table.scores[info.id] += tensor_sum(s) / static_cast<double>(s.size());
    }
  }
  for (auto& [id, c] : table.scores) c /= static_cast<double>(count);
  table.samples = count;
  return table;
}

ImportanceTable importance_scores(const ContributionTable& table) {
  double total = 0;
  for (const auto& [id, c] : table.scores) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw NumericError("contribution of " + id.name() + " is negative or not finite");
    total += c;
  }
  if (!(total > 0.0)) throw NumericError("all contribution scores are zero; importance cannot be normalized");
  ImportanceTable out;
  for (const auto& [id, c] : table.scores) out.omega[id] = c / total;
  return out;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw DimensionError("spearman needs two equal-length series of length >= 2");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0 || vb == 0) return 0.0;
  return cov / std::sqrt(va * vb);
}

template struct RelevanceState<float>;
template struct RelevanceState<double>;
template RelevanceState<float> propagate_relevance(const model::Trace<float>&, std::size_t);
template RelevanceState<double> propagate_relevance(const model::Trace<double>&, std::size_t);
template RelevanceState<float> propagate_relevance(const model::ToyViT<float>&, const Tensor<float>&, std::size_t);
template RelevanceState<double> propagate_relevance(const model::ToyViT<double>&, const Tensor<double>&, std::size_t);
template Tensor<float> relevance_map(std::span<const Tensor<float>>, std::span<const Tensor<float>>);
template Tensor<double> relevance_map(std::span<const Tensor<double>>, std::span<const Tensor<double>>);
template ContributionTable contribution_scores(const model::ToyViT<float>&, const Tensor<float>&);
template ContributionTable contribution_scores(const model::ToyViT<double>&, const Tensor<double>&);

}  // namespace mixq::lrp
