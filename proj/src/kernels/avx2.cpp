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

// Compiled with -mavx2 -mfma. Only reached through the dispatcher after a
// CPUID check, so nothing in here may be called unconditionally.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "mixq/kernels/kernels.hpp"

namespace mixq::kernels::avx2 {
namespace {

// Register-blocked row kernel: kBlock vectors of accumulators per column tile.
constexpr int kBlock = 4;

inline __m256d fma(__m256d a, __m256d b, __m256d c) { return _mm256_fmadd_pd(a, b, c); }
inline __m256 fma(__m256 a, __m256 b, __m256 c) { return _mm256_fmadd_ps(a, b, c); }

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t W = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V set1(T v) { return _mm256_set1_pd(v); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V div(V a, V b) { return _mm256_div_pd(a, b); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static V sub(V a, V b) { return _mm256_sub_pd(a, b); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V max(V a, V b) { return _mm256_max_pd(a, b); }
  static V min(V a, V b) { return _mm256_min_pd(a, b); }
  static V trunc(V a) { return _mm256_round_pd(a, _MM_FROUND_TO_ZERO | _MM_FROUND_NO_EXC); }
  static V and_(V a, V b) { return _mm256_and_pd(a, b); }
  static V or_(V a, V b) { return _mm256_or_pd(a, b); }
  static V andnot(V a, V b) { return _mm256_andnot_pd(a, b); }
  static V ge(V a, V b) { return _mm256_cmp_pd(a, b, _CMP_GE_OQ); }
};

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t W = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V set1(T v) { return _mm256_set1_ps(v); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V div(V a, V b) { return _mm256_div_ps(a, b); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static V sub(V a, V b) { return _mm256_sub_ps(a, b); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V max(V a, V b) { return _mm256_max_ps(a, b); }
  static V min(V a, V b) { return _mm256_min_ps(a, b); }
  static V trunc(V a) { return _mm256_round_ps(a, _MM_FROUND_TO_ZERO | _MM_FROUND_NO_EXC); }
  static V and_(V a, V b) { return _mm256_and_ps(a, b); }
  static V or_(V a, V b) { return _mm256_or_ps(a, b); }
  static V andnot(V a, V b) { return _mm256_andnot_ps(a, b); }
  static V ge(V a, V b) { return _mm256_cmp_ps(a, b, _CMP_GE_OQ); }
};

template <typename Ops>
void matmul_impl(const typename Ops::T* a, const typename Ops::T* b, typename Ops::T* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  using T = typename Ops::T;
  using V = typename Ops::V;
  constexpr std::size_t W = Ops::W;
  constexpr std::size_t tile = W * kBlock;
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    std::size_t j = 0;
    for (; j + tile <= n; j += tile) {
      V acc[kBlock];
      for (auto& v : acc) v = Ops::zero();
      for (std::size_t p = 0; p < k; ++p) {
        const V av = Ops::set1(arow[p]);
        const T* brow = b + p * n + j;
        for (int t = 0; t < kBlock; ++t) acc[t] = fma(av, Ops::load(brow + t * W), acc[t]);
      }
      for (int t = 0; t < kBlock; ++t) Ops::store(crow + j + t * W, acc[t]);
    }
    for (; j + W <= n; j += W) {
      V acc = Ops::zero();
      for (std::size_t p = 0; p < k; ++p) acc = fma(Ops::set1(arow[p]), Ops::load(b + p * n + j), acc);
      Ops::store(crow + j, acc);
    }
    for (; j < n; ++j) {
      T acc = T{0};
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(arow[p], b[p * n + j], acc);
      crow[j] = acc;
    }
  }
}

// Mirrors scalar::code_of op for op, so results match bitwise:
// round-half-away-from-zero built from truncation plus an exact fractional test.
template <typename Ops>
inline typename Ops::V code_vec(typename Ops::V x, typename Ops::V s, typename Ops::V z, typename Ops::V qmax) {
  using V = typename Ops::V;
  const V sign = Ops::set1(typename Ops::T(-0.0));
  const V q = Ops::div(x, s);
  const V t = Ops::trunc(q);
  const V frac = Ops::andnot(sign, Ops::sub(q, t));
  const V step = Ops::or_(Ops::set1(typename Ops::T(1)), Ops::and_(sign, q));
  const V r = Ops::add(t, Ops::and_(Ops::ge(frac, Ops::set1(typename Ops::T(0.5))), step));
  // Operand order reproduces std::max(v, 0) / std::min(v, qmax) exactly.
  return Ops::min(qmax, Ops::max(Ops::zero(), Ops::add(r, z)));
}

template <typename T>
inline T code_scalar(T x, T s, T z, T qmax) {
  const T r = std::round(x / s);
  return std::min(std::max(r + z, T{0}), qmax);
}

template <typename Ops, bool Dequant>
void quant_impl(const typename Ops::T* x, typename Ops::T* y, std::size_t rows, std::size_t cols,
                const typename Ops::T* scale, const typename Ops::T* zero, typename Ops::T qmax) {
  using V = typename Ops::V;
  constexpr std::size_t W = Ops::W;
  const V qv = Ops::set1(qmax);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto* xr = x + i * cols;
    auto* yr = y + i * cols;
    std::size_t j = 0;
    for (; j + W <= cols; j += W) {
      const V s = Ops::load(scale + j);
      const V z = Ops::load(zero + j);
      const V code = code_vec<Ops>(Ops::load(xr + j), s, z, qv);
      if constexpr (Dequant) {
        Ops::store(yr + j, Ops::mul(s, Ops::sub(code, z)));
      } else {
        Ops::store(yr + j, code);
      }
    }
    for (; j < cols; ++j) {
      const auto code = code_scalar(xr[j], scale[j], zero[j], qmax);
      if constexpr (Dequant) {
        yr[j] = scale[j] * (code - zero[j]);
      } else {
        yr[j] = code;
      }
    }
  }
}

}  // namespace

void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  matmul_impl<F32>(a, b, c, m, k, n);
}
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  matmul_impl<F64>(a, b, c, m, k, n);
}
void fake_quant_uniform(const float* x, float* y, std::size_t rows, std::size_t cols, const float* scale,
                        const float* zero, float qmax) {
  quant_impl<F32, true>(x, y, rows, cols, scale, zero, qmax);
}
void fake_quant_uniform(const double* x, double* y, std::size_t rows, std::size_t cols, const double* scale,
                        const double* zero, double qmax) {
  quant_impl<F64, true>(x, y, rows, cols, scale, zero, qmax);
}
void quantize_uniform(const float* x, float* codes, std::size_t rows, std::size_t cols, const float* scale,
                      const float* zero, float qmax) {
  quant_impl<F32, false>(x, codes, rows, cols, scale, zero, qmax);
}
void quantize_uniform(const double* x, double* codes, std::size_t rows, std::size_t cols, const double* scale,
                      const double* zero, double qmax) {
  quant_impl<F64, false>(x, codes, rows, cols, scale, zero, qmax);
}

}  // namespace mixq::kernels::avx2
