// Copyright 2026 The delsmm Authors
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

#include <cstddef>
#include <string_view>

// Dense inner loops used by the tape and the optimizer. Every kernel has a
// portable scalar reference; an AVX2/FMA variant is compiled alongside it and
// picked at runtime when the CPU supports it. Set DELSMM_SIMD=scalar to force
// the reference path.

namespace delsmm::simd {

struct AdamCoeffs {
  double beta1;
  double beta2;
  double eps;
  double lr;
  double bias1;  // 1 - beta1^t
  double bias2;  // 1 - beta2^t
};

struct KernelTable {
  std::string_view name;
  // C[m×n] = A[m×k] · B[n×k]ᵀ
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                  std::size_t k);
  // C[m×n] = A[m×k] · B[k×n]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                  std::size_t k);
  // C[m×n] = A[k×m]ᵀ · B[k×n]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                  std::size_t k);
  // y += alpha · x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = x ∘ y
  void (*hadamard)(const double* x, const double* y, double* out, std::size_t n);
  // In-place bias-corrected Adam update. Uses no fused multiply-add so every
  // variant is bitwise identical to the reference.
  void (*adam_update)(double* params, double* m, double* v, const double* g, std::size_t n,
                      const AdamCoeffs& c);
};

const KernelTable& scalar_kernels();

/// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_kernels();

bool cpu_has_avx2();

/// Kernel table selected once per process.
const KernelTable& active_kernels();

}  // namespace delsmm::simd
