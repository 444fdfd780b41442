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

#include <cstdlib>
#include <string_view>

#include "mixq/error.hpp"
#include "mixq/kernels/kernels.hpp"

namespace mixq::kernels {
namespace {

Isa pick_initial() noexcept {
  if (const char* env = std::getenv("MIXQ_ISA")) {
    const std::string_view v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
  }
  return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

Isa& current() noexcept {
  static Isa isa = pick_initial();
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) noexcept {
  return isa == Isa::Avx2 ? "avx2" : "scalar";
}

bool isa_supported(Isa isa) noexcept {
  if (isa == Isa::Scalar) return true;
#if defined(MIXQ_HAVE_AVX2_KERNELS)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() noexcept { return current(); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) throw ConfigError(std::string("ISA not supported on this CPU: ") + isa_name(isa));
  current() = isa;
}

#if defined(MIXQ_HAVE_AVX2_KERNELS)
#define MIXQ_DISPATCH(fn, ...)                 \
  do {                                         \
    if (current() == Isa::Avx2) {              \
      avx2::fn(__VA_ARGS__);                   \
    } else {                                   \
      scalar::fn(__VA_ARGS__);                 \
    }                                          \
  } while (0)
#else
#define MIXQ_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  MIXQ_DISPATCH(matmul, a, b, c, m, k, n);
}
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  MIXQ_DISPATCH(matmul, a, b, c, m, k, n);
}
void fake_quant_uniform(const float* x, float* y, std::size_t rows, std::size_t cols, const float* scale,
                        const float* zero, float qmax) {
  MIXQ_DISPATCH(fake_quant_uniform, x, y, rows, cols, scale, zero, qmax);
}
void fake_quant_uniform(const double* x, double* y, std::size_t rows, std::size_t cols, const double* scale,
                        const double* zero, double qmax) {
  MIXQ_DISPATCH(fake_quant_uniform, x, y, rows, cols, scale, zero, qmax);
}
void quantize_uniform(const float* x, float* codes, std::size_t rows, std::size_t cols, const float* scale,
                      const float* zero, float qmax) {
  MIXQ_DISPATCH(quantize_uniform, x, codes, rows, cols, scale, zero, qmax);
}
void quantize_uniform(const double* x, double* codes, std::size_t rows, std::size_t cols, const double* scale,
                      const double* zero, double qmax) {
  MIXQ_DISPATCH(quantize_uniform, x, codes, rows, cols, scale, zero, qmax);
}

#undef MIXQ_DISPATCH

}  // namespace mixq::kernels
