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

#include <algorithm>
#include <cmath>

#include "mixq/kernels/kernels.hpp"

namespace mixq::kernels::scalar {
namespace {

template <typename T>
void matmul_impl(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    std::fill(crow, crow + n, T{0});
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
inline T code_of(T x, T s, T z, T qmax) {
  const T r = std::round(x / s);
  return std::min(std::max(r + z, T{0}), qmax);
}

template <typename T>
void fake_quant_impl(const T* x, T* y, std::size_t rows, std::size_t cols, const T* scale, const T* zero, T qmax) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const T s = scale[j], z = zero[j];
      y[i * cols + j] = s * (code_of(x[i * cols + j], s, z, qmax) - z);
    }
  }
}

template <typename T>
void quantize_impl(const T* x, T* codes, std::size_t rows, std::size_t cols, const T* scale, const T* zero,
                   T qmax) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) codes[i * cols + j] = code_of(x[i * cols + j], scale[j], zero[j], qmax);
}

}  // namespace

void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  matmul_impl(a, b, c, m, k, n);
}
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  matmul_impl(a, b, c, m, k, n);
}
void fake_quant_uniform(const float* x, float* y, std::size_t rows, std::size_t cols, const float* scale,
                        const float* zero, float qmax) {
  fake_quant_impl(x, y, rows, cols, scale, zero, qmax);
}
void fake_quant_uniform(const double* x, double* y, std::size_t rows, std::size_t cols, const double* scale,
                        const double* zero, double qmax) {
  fake_quant_impl(x, y, rows, cols, scale, zero, qmax);
}
void quantize_uniform(const float* x, float* codes, std::size_t rows, std::size_t cols, const float* scale,
                      const float* zero, float qmax) {
  quantize_impl(x, codes, rows, cols, scale, zero, qmax);
}
void quantize_uniform(const double* x, double* codes, std::size_t rows, std::size_t cols, const double* scale,
                      const double* zero, double qmax) {
  quantize_impl(x, codes, rows, cols, scale, zero, qmax);
}

}  // namespace mixq::kernels::scalar
