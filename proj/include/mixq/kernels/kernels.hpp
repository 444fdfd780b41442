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

// Data-parallel inner loops. Every kernel has a portable scalar reference in
// mixq::kernels::scalar and, on x86-64, an AVX2/FMA variant in
// mixq::kernels::avx2. The unqualified entry points dispatch to whichever
// implementation is active; the choice is made once from CPUID and can be
// overridden with MIXQ_ISA=scalar|avx2 or set_isa().

#include <cstddef>

namespace mixq::kernels {

enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa) noexcept;
bool isa_supported(Isa isa) noexcept;
Isa active_isa() noexcept;
/// Throws mixq::ConfigError when the CPU lacks the requested extension.
void set_isa(Isa isa);

// c[m x n] = a[m x k] * b[k x n], all row-major and densely packed.
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

// Uniform affine fake quantization with per-column parameters:
//   y = s_j * (clip(round(x / s_j) + z_j, 0, qmax) - z_j)
// round() is half-away-from-zero. Results are bitwise identical across ISAs.
void fake_quant_uniform(const float* x, float* y, std::size_t rows, std::size_t cols, const float* scale,
                        const float* zero, float qmax);
void fake_quant_uniform(const double* x, double* y, std::size_t rows, std::size_t cols, const double* scale,
                        const double* zero, double qmax);

// Integer codes for the same quantizer: clip(round(x / s_j) + z_j, 0, qmax).
void quantize_uniform(const float* x, float* codes, std::size_t rows, std::size_t cols, const float* scale,
                      const float* zero, float qmax);
void quantize_uniform(const double* x, double* codes, std::size_t rows, std::size_t cols, const double* scale,
                      const double* zero, double qmax);

namespace scalar {
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void fake_quant_uniform(const float* x, float* y, std::size_t rows, std::size_t cols, const float* scale,
                        const float* zero, float qmax);
void fake_quant_uniform(const double* x, double* y, std::size_t rows, std::size_t cols, const double* scale,
                        const double* zero, double qmax);
void quantize_uniform(const float* x, float* codes, std::size_t rows, std::size_t cols, const float* scale,
                      const float* zero, float qmax);
void quantize_uniform(const double* x, double* codes, std::size_t rows, std::size_t cols, const double* scale,
                      const double* zero, double qmax);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define MIXQ_HAVE_AVX2_KERNELS 1
namespace avx2 {
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void fake_quant_uniform(const float* x, float* y, std::size_t rows, std::size_t cols, const float* scale,
                        const float* zero, float qmax);
void fake_quant_uniform(const double* x, double* y, std::size_t rows, std::size_t cols, const double* scale,
                        const double* zero, double qmax);
void quantize_uniform(const float* x, float* codes, std::size_t rows, std::size_t cols, const float* scale,
                      const float* zero, float qmax);
void quantize_uniform(const double* x, double* codes, std::size_t rows, std::size_t cols, const double* scale,
                      const double* zero, double qmax);
}  // namespace avx2
#endif

}  // namespace mixq::kernels
