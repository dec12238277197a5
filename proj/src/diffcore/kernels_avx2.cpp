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

#include "delsmm/diffcore/kernels.hpp"

#if defined(DELSMM_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>

namespace delsmm::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  const std::size_t k4 = k & ~std::size_t{3};
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      __m256d acc = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p < k4; p += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(ar + p), _mm256_loadu_pd(br + p), acc);
      }
      double tail = 0.0;
      for (; p < k; ++p) tail += ar[p] * br[p];
      c[i * n + j] = hsum(acc) + tail;
    }
  }
}

// c[0..n) += s · row[0..n)
inline void row_fma(double s, const double* row, double* c, std::size_t n) {
  const std::size_t n4 = n & ~std::size_t{3};
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t j = 0;
  for (; j < n4; j += 4) {
    _mm256_storeu_pd(c + j,
                     _mm256_fmadd_pd(sv, _mm256_loadu_pd(row + j), _mm256_loadu_pd(c + j)));
  }
  for (; j < n; ++j) c[j] += s * row[j];
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    double* cr = c + i * n;
    for (std::size_t j = 0; j < n; ++j) cr[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) row_fma(a[i * k + p], b + p * n, cr, n);
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a + p * m;
    const double* br = b + p * n;
    for (std::size_t i = 0; i < m; ++i) row_fma(ar[i], br, c + i * n, n);
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) { row_fma(alpha, x, y, n); }

void hadamard(const double* x, const double* y, double* out, std::size_t n) {
  const std::size_t n4 = n & ~std::size_t{3};
  std::size_t i = 0;
  for (; i < n4; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void adam_update(double* params, double* m, double* v, const double* g, std::size_t n,
                 const AdamCoeffs& c) {
  const double one_m_b1 = 1.0 - c.beta1;
  const double one_m_b2 = 1.0 - c.beta2;
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d omb1 = _mm256_set1_pd(one_m_b1);
  const __m256d omb2 = _mm256_set1_pd(one_m_b2);
  const __m256d bc1 = _mm256_set1_pd(c.bias1);
  const __m256d bc2 = _mm256_set1_pd(c.bias2);
  const __m256d lr = _mm256_set1_pd(c.lr);
  const __m256d eps = _mm256_set1_pd(c.eps);
  const std::size_t n4 = n & ~std::size_t{3};
  std::size_t i = 0;
  for (; i < n4; i += 4) {
    const __m256d gi = _mm256_loadu_pd(g + i);
    const __m256d mi =
        _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, gi));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(omb2, _mm256_mul_pd(gi, gi)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_div_pd(mi, bc1);
    const __m256d vhat = _mm256_div_pd(vi, bc2);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, mhat),
                                       _mm256_add_pd(_mm256_sqrt_pd(vhat), eps));
    _mm256_storeu_pd(params + i, _mm256_sub_pd(_mm256_loadu_pd(params + i), step));
  }
  for (; i < n; ++i) {
    const double gi = g[i];
    const double mi = c.beta1 * m[i] + one_m_b1 * gi;
    const double vi = c.beta2 * v[i] + one_m_b2 * (gi * gi);
    m[i] = mi;
    v[i] = vi;
    const double mhat = mi / c.bias1;
    const double vhat = vi / c.bias2;
    params[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

constexpr KernelTable kAvx2{"avx2", gemm_nt, gemm_nn, gemm_tn, axpy, hadamard, adam_update};

}  // namespace

const KernelTable* avx2_kernels() { return &kAvx2; }

}  // namespace delsmm::simd

#else

namespace delsmm::simd {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace delsmm::simd

#endif
