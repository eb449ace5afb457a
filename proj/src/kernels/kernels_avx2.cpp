// SPDX-License-Identifier: Apache-2.0
// Compiled with -mavx2 -mfma. Nothing in this file may run unless the
// dispatcher has confirmed CPU support.
#include "metaxp/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <cmath>

namespace metaxp::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// c_row[0..n) += sum_p coeff(p) * rows(p)[0..n), with n split into 16-wide
// register blocks, then 4-wide, then a scalar tail.
template <class Coeff, class Row>
inline void accumulate_rows(std::size_t n, std::size_t k, Coeff coeff, Row rows, double* c_row) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256d c0 = _mm256_loadu_pd(c_row + j);
    __m256d c1 = _mm256_loadu_pd(c_row + j + 4);
    __m256d c2 = _mm256_loadu_pd(c_row + j + 8);
    __m256d c3 = _mm256_loadu_pd(c_row + j + 12);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d s = _mm256_set1_pd(coeff(p));
      const double* r = rows(p) + j;
      c0 = _mm256_fmadd_pd(s, _mm256_loadu_pd(r), c0);
      c1 = _mm256_fmadd_pd(s, _mm256_loadu_pd(r + 4), c1);
      c2 = _mm256_fmadd_pd(s, _mm256_loadu_pd(r + 8), c2);
      c3 = _mm256_fmadd_pd(s, _mm256_loadu_pd(r + 12), c3);
    }
    _mm256_storeu_pd(c_row + j, c0);
    _mm256_storeu_pd(c_row + j + 4, c1);
    _mm256_storeu_pd(c_row + j + 8, c2);
    _mm256_storeu_pd(c_row + j + 12, c3);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = _mm256_loadu_pd(c_row + j);
    for (std::size_t p = 0; p < k; ++p) {
      c0 = _mm256_fmadd_pd(_mm256_set1_pd(coeff(p)), _mm256_loadu_pd(rows(p) + j), c0);
    }
    _mm256_storeu_pd(c_row + j, c0);
  }
  for (; j < n; ++j) {
    double acc = c_row[j];
    for (std::size_t p = 0; p < k; ++p) acc += coeff(p) * rows(p)[j];
    c_row[j] = acc;
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = a + i * k;
    accumulate_rows(
        n, k, [a_row](std::size_t p) { return a_row[p]; },
        [b, n](std::size_t p) { return b + p * n; }, c + i * n);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = a + i * k;
    double* c_row = c + i * n;
    std::size_t j = 0;
    // Four output columns at a time, reduced together at the end.
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
      __m256d acc2 = _mm256_setzero_pd(), acc3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d x = _mm256_loadu_pd(a_row + p);
        acc0 = _mm256_fmadd_pd(x, _mm256_loadu_pd(b0 + p), acc0);
        acc1 = _mm256_fmadd_pd(x, _mm256_loadu_pd(b1 + p), acc1);
        acc2 = _mm256_fmadd_pd(x, _mm256_loadu_pd(b2 + p), acc2);
        acc3 = _mm256_fmadd_pd(x, _mm256_loadu_pd(b3 + p), acc3);
      }
      const __m256d t0 = _mm256_hadd_pd(acc0, acc1);
      const __m256d t1 = _mm256_hadd_pd(acc2, acc3);
      __m256d sum = _mm256_add_pd(_mm256_permute2f128_pd(t0, t1, 0x20), _mm256_permute2f128_pd(t0, t1, 0x31));
      if (p < k) {
        alignas(32) double tail[4] = {0.0, 0.0, 0.0, 0.0};
        for (; p < k; ++p) {
          tail[0] += a_row[p] * b0[p];
          tail[1] += a_row[p] * b1[p];
          tail[2] += a_row[p] * b2[p];
          tail[3] += a_row[p] * b3[p];
        }
        sum = _mm256_add_pd(sum, _mm256_load_pd(tail));
      }
      _mm256_storeu_pd(c_row + j, _mm256_add_pd(_mm256_loadu_pd(c_row + j), sum));
    }
    for (; j < n; ++j) c_row[j] += dot(k, a_row, b + j * k);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    accumulate_rows(
        n, k, [a, m, i](std::size_t r) { return a[r * m + i]; },
        [b, n](std::size_t r) { return b + r * n; }, c + i * n);
  }
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d s = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(s, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale(std::size_t n, double alpha, double* x) {
  const __m256d s = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(s, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

bool all_finite(std::size_t n, const double* x) {
  const __m256d exponent = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7ff0000000000000LL));
  __m256d bad = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = _mm256_and_pd(_mm256_loadu_pd(x + i), exponent);
    bad = _mm256_or_pd(bad, _mm256_cmp_pd(e, exponent, _CMP_EQ_OQ));
  }
  if (_mm256_movemask_pd(bad) != 0) return false;
  for (; i < n; ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

}  // namespace metaxp::kernels::avx2

#else

// Non-x86 builds: the symbols exist so the dispatch table links, but
// backend_supported(Avx2) is false and they are never reached.
namespace metaxp::kernels::avx2 {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  scalar::gemm_nn(m, n, k, a, b, c);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  scalar::gemm_nt(m, n, k, a, b, c);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  scalar::gemm_tn(m, n, k, a, b, c);
}
double dot(std::size_t n, const double* x, const double* y) { return scalar::dot(n, x, y); }
void axpy(std::size_t n, double alpha, const double* x, double* y) { scalar::axpy(n, alpha, x, y); }
void scale(std::size_t n, double alpha, double* x) { scalar::scale(n, alpha, x); }
bool all_finite(std::size_t n, const double* x) { return scalar::all_finite(n, x); }
}  // namespace metaxp::kernels::avx2

#endif
