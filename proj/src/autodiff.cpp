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

#include "mixq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mixq/kernels/kernels.hpp"

namespace mixq::ad {

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Matmul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Add: return "add";
    case Op::AddRow: return "add_row";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::Gelu: return "gelu";
    case Op::LayerNorm: return "layernorm";
    case Op::MeanRows: return "mean_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::ConcatCols: return "concat_cols";
    case Op::Sum: return "sum";
    case Op::Tap: return "tap";
    case Op::StraightThrough: return "straight_through";
  }
  return "?";
}

template <typename T>
T gelu_value(T x) noexcept {
  // x * Phi(x); erfc keeps the negative tail accurate.
  return x * T(0.5) * std::erfc(-x / std::numbers::sqrt2_v<T>);
}

template <typename T>
T gelu_derivative(T x) noexcept {
  const T cdf = T(0.5) * std::erfc(-x / std::numbers::sqrt2_v<T>);
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

template <typename T>
const Tensor<T>& Gradients<T>::operator[](Var v) const {
  if (!has(v)) throw Error(ErrorCode::Internal, "no gradient recorded for node " + std::to_string(v.id));
  return *grads_[v.id];
}

namespace {

template <typename T>
Tensor<T> matmul_values(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> c(Shape{a.dim(0), b.dim(1)});
  kernels::matmul(a.ptr(), b.ptr(), c.ptr(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

template <typename T>
void accumulate(std::optional<Tensor<T>>& slot, const Tensor<T>& g) {
  if (!slot) {
    slot = g;
    return;
  }
  auto dst = slot->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_to_string(s));
}

}  // namespace

template <typename T>
Var Graph<T>::push(Node<T> n) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max() - 1) throw Error(ErrorCode::Internal, "graph full");
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const Node<T>& Graph<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw Error(ErrorCode::Internal, "invalid graph handle");
  return nodes_[v.id];
}

template <typename T>
bool Graph<T>::any_requires_grad(std::span<const Var> in) const {
  return std::any_of(in.begin(), in.end(), [&](Var v) { return node(v).requires_grad; });
}

template <typename T>
Var Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node<T> n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::parameter(Tensor<T> value, bool requires_grad) {
  Var v = leaf(std::move(value), requires_grad);
  mut(v).parameter = true;
  return v;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  require_rank2(av.shape(), "matmul");
  require_rank2(bv.shape(), "matmul");
  if (av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_to_string(av.shape()) + " x " +
                         shape_to_string(bv.shape()));
  }
  Node<T> n;
  n.op = Op::Matmul;
  n.inputs = {a, b};
  n.value = matmul_values(av, bv);
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::transpose(Var a) {
  Node<T> n;
  n.op = Op::Transpose;
  n.inputs = {a};
  n.value = value(a).transposed();
  n.requires_grad = node(a).requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: " + shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
  }
  Node<T> n;
  n.op = Op::Add;
  n.inputs = {a, b};
  n.value = av;
  for (std::size_t i = 0; i < bv.size(); ++i) n.value[i] += bv[i];
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::add_row(Var x, Var bias) {
  const auto& xv = value(x);
  const auto& bv = value(bias);
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_row: bias " + shape_to_string(bv.shape()) + " vs input " + shape_to_string(xv.shape()));
  }
  Node<T> n;
  n.op = Op::AddRow;
  n.inputs = {x, bias};
  n.value = xv;
  const std::size_t c = xv.cols();
  for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] += bv[i % c];
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("mul: " + shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
  }
  Node<T> n;
  n.op = Op::Mul;
  n.inputs = {a, b};
  n.value = av;
  for (std::size_t i = 0; i < bv.size(); ++i) n.value[i] *= bv[i];
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::scale(Var x, T factor) {
  Node<T> n;
  n.op = Op::Scale;
  n.inputs = {x};
  n.scalar = factor;
  n.value = value(x);
  for (auto& v : n.value.data()) v *= factor;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::softmax_rows(Var x) {
  const auto& xv = value(x);
  if (xv.cols() < 1) throw DimensionError("softmax_rows: empty last dimension");
  Node<T> n;
  n.op = Op::SoftmaxRows;
  n.inputs = {x};
  n.value = xv;
  const std::size_t c = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    T* row = n.value.ptr() + r * c;
    const T mx = *std::max_element(row, row + c);
    T total{0};
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= total;
  }
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::gelu(Var x) {
  Node<T> n;
  n.op = Op::Gelu;
  n.inputs = {x};
  n.value = value(x);
  for (auto& v : n.value.data()) v = gelu_value(v);
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::layernorm(Var x, Var gamma, Var beta, T eps) {
  const auto& xv = value(x);
  const auto& gv = value(gamma);
  const auto& bv = value(beta);
  const std::size_t d = xv.cols();
  if (d < 2) throw DimensionError("layernorm needs at least 2 features, got " + shape_to_string(xv.shape()));
  if (gv.size() != d || bv.size() != d) {
    throw DimensionError("layernorm: affine parameters " + shape_to_string(gv.shape()) + "/" +
                         shape_to_string(bv.shape()) + " vs input " + shape_to_string(xv.shape()));
  }
  if (!(eps > T{0})) throw ConfigError("layernorm eps must be positive");
  Node<T> n;
  n.op = Op::LayerNorm;
  n.inputs = {x, gamma, beta};
  n.scalar = eps;
  n.value = Tensor<T>(xv.shape());
  const std::size_t rows = xv.rows();
  n.saved.resize(2 * rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.ptr() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(d);
    const T rstd = T{1} / std::sqrt(var + eps);
    n.saved[r] = mean;
    n.saved[rows + r] = rstd;
    T* out = n.value.ptr() + r * d;
    for (std::size_t j = 0; j < d; ++j) out[j] = (in[j] - mean) * rstd * gv[j] + bv[j];
  }
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::mean_rows(Var x) {
  const auto& xv = value(x);
  require_rank2(xv.shape(), "mean_rows");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Node<T> n;
  n.op = Op::MeanRows;
  n.inputs = {x};
  n.value = Tensor<T>(Shape{1, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) n.value[j] += xv.at(r, j);
  for (auto& v : n.value.data()) v /= static_cast<T>(rows);
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::slice_cols(Var x, std::size_t begin, std::size_t count) {
  const auto& xv = value(x);
  require_rank2(xv.shape(), "slice_cols");
  if (begin + count > xv.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_to_string(xv.shape()));
  }
  Node<T> n;
  n.op = Op::SliceCols;
  n.inputs = {x};
  n.offset = begin;
  n.value = Tensor<T>(Shape{xv.dim(0), count});
  for (std::size_t r = 0; r < xv.dim(0); ++r)
    std::copy_n(xv.ptr() + r * xv.dim(1) + begin, count, n.value.ptr() + r * count);
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).dim(0);
  std::size_t total = 0;
  for (Var p : parts) {
    const auto& v = value(p);
    require_rank2(v.shape(), "concat_cols");
    if (v.dim(0) != rows) throw DimensionError("concat_cols: row mismatch " + shape_to_string(v.shape()));
    total += v.dim(1);
  }
  Node<T> n;
  n.op = Op::ConcatCols;
  n.inputs.assign(parts.begin(), parts.end());
  n.value = Tensor<T>(Shape{rows, total});
  std::size_t col = 0;
  for (Var p : parts) {
    const auto& v = value(p);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.ptr() + r * v.dim(1), v.dim(1), n.value.ptr() + r * total + col);
    col += v.dim(1);
  }
  n.requires_grad = any_requires_grad(n.inputs);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::sum(Var x) {
  Node<T> n;
  n.op = Op::Sum;
  n.inputs = {x};
  T s{0};
  for (T v : value(x).data()) s += v;
  n.value = Tensor<T>::scalar(s);
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::tap(Var x, const std::function<void(Tensor<T>&)>& edit) {
  Node<T> n;
  n.op = Op::Tap;
  n.inputs = {x};
  n.value = value(x);
  if (edit) {
    edit(n.value);
    if (n.value.shape() != value(x).shape()) throw DimensionError("tap edit changed the tensor shape");
  }
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::straight_through(Var x, Tensor<T> replacement) {
  if (replacement.shape() != value(x).shape()) {
    throw DimensionError("straight_through: replacement " + shape_to_string(replacement.shape()) + " vs " +
                         shape_to_string(value(x).shape()));
  }
  Node<T> n;
  n.op = Op::StraightThrough;
  n.inputs = {x};
  n.value = std::move(replacement);
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

template <typename T>
Gradients<T> Graph<T>::backward(Var out) const {
  return backward(out, Tensor<T>(value(out).shape(), T{1}));
}

template <typename T>
Gradients<T> Graph<T>::backward(Var out, const Tensor<T>& seed) const {
  const auto& on = node(out);
  if (seed.shape() != on.value.shape()) {
    throw DimensionError("backward: seed " + shape_to_string(seed.shape()) + " vs output " +
                         shape_to_string(on.value.shape()));
  }
  Gradients<T> grads(nodes_.size());
  if (!on.requires_grad) return grads;
  grads.slot(out) = seed;

  for (std::size_t idx = out.id + 1; idx-- > 0;) {
    const Var self{static_cast<std::uint32_t>(idx)};
    auto& gslot = grads.slot(self);
    if (!gslot) continue;
    const Tensor<T>& g = *gslot;
    const Node<T>& n = nodes_[idx];
    auto send = [&](std::size_t k, const Tensor<T>& contribution) {
      const Var in = n.inputs[k];
      if (node(in).requires_grad) accumulate(grads.slot(in), contribution);
    };
    auto wants = [&](std::size_t k) { return node(n.inputs[k]).requires_grad; };

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Matmul: {
        const auto& a = value(n.inputs[0]);
        const auto& b = value(n.inputs[1]);
        if (wants(0)) send(0, matmul_values(g, b.transposed()));
        if (wants(1)) send(1, matmul_values(a.transposed(), g));
        break;
      }
      case Op::Transpose:
        send(0, g.transposed());
        break;
      case Op::Add:
        send(0, g);
        send(1, g);
        break;
      case Op::AddRow: {
        send(0, g);
        if (wants(1)) {
          const auto& b = value(n.inputs[1]);
          Tensor<T> gb(b.shape());
          const std::size_t c = g.cols();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
          send(1, gb);
        }
        break;
      }
      case Op::Mul: {
        const auto& a = value(n.inputs[0]);
        const auto& b = value(n.inputs[1]);
        if (wants(0)) {
          Tensor<T> ga(g);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b[i];
          send(0, ga);
        }
        if (wants(1)) {
          Tensor<T> gb(g);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a[i];
          send(1, gb);
        }
        break;
      }
      case Op::Scale: {
        Tensor<T> gx(g);
        for (auto& v : gx.data()) v *= n.scalar;
        send(0, gx);
        break;
      }
      case Op::SoftmaxRows: {
        const auto& y = n.value;
        Tensor<T> gx(y.shape());
        const std::size_t c = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          T dot{0};
          for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
          for (std::size_t j = 0; j < c; ++j) gx[r * c + j] = y[r * c + j] * (g[r * c + j] - dot);
        }
        send(0, gx);
        break;
      }
      case Op::Gelu: {
        const auto& x = value(n.inputs[0]);
        Tensor<T> gx(g);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= gelu_derivative(x[i]);
        send(0, gx);
        break;
      }
      case Op::LayerNorm: {
        const auto& x = value(n.inputs[0]);
        const auto& gamma = value(n.inputs[1]);
        const std::size_t d = x.cols(), rows = x.rows();
        Tensor<T> gx(x.shape()), ggamma(gamma.shape()), gbeta(gamma.shape());
        std::vector<T> xhat(d), gn(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T mean = n.saved[r], rstd = n.saved[rows + r];
          T mean_gn{0}, mean_gn_xhat{0};
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (x[r * d + j] - mean) * rstd;
            gn[j] = g[r * d + j] * gamma[j];
            ggamma[j] += g[r * d + j] * xhat[j];
            gbeta[j] += g[r * d + j];
            mean_gn += gn[j];
            mean_gn_xhat += gn[j] * xhat[j];
          }
          mean_gn /= static_cast<T>(d);
          mean_gn_xhat /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) gx[r * d + j] = rstd * (gn[j] - mean_gn - xhat[j] * mean_gn_xhat);
        }
        send(0, gx);
        send(1, ggamma);
        send(2, gbeta);
        break;
      }
      case Op::MeanRows: {
        const auto& x = value(n.inputs[0]);
        Tensor<T> gx(x.shape());
        const std::size_t rows = x.dim(0), cols = x.dim(1);
        const T inv = T{1} / static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] = g[j] * inv;
        send(0, gx);
        break;
      }
      case Op::SliceCols: {
        const auto& x = value(n.inputs[0]);
        Tensor<T> gx(x.shape());
        const std::size_t count = g.dim(1), width = x.dim(1);
        for (std::size_t r = 0; r < x.dim(0); ++r)
          std::copy_n(g.ptr() + r * count, count, gx.ptr() + r * width + n.offset);
        send(0, gx);
        break;
      }
      case Op::ConcatCols: {
        const std::size_t rows = g.dim(0), total = g.dim(1);
        std::size_t col = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const std::size_t w = value(n.inputs[k]).dim(1);
          if (wants(k)) {
            Tensor<T> part(Shape{rows, w});
            for (std::size_t r = 0; r < rows; ++r) std::copy_n(g.ptr() + r * total + col, w, part.ptr() + r * w);
            send(k, part);
          }
          col += w;
        }
        break;
      }
      case Op::Sum: {
        send(0, Tensor<T>(value(n.inputs[0]).shape(), g[0]));
        break;
      }
      case Op::Tap:
      case Op::StraightThrough:
        send(0, g);
        break;
    }
  }
  return grads;
}

template float gelu_value(float) noexcept;
template double gelu_value(double) noexcept;
template float gelu_derivative(float) noexcept;
template double gelu_derivative(double) noexcept;

template class Graph<float>;
template class Graph<double>;
template class Gradients<float>;
template class Gradients<double>;

}  // namespace mixq::ad
