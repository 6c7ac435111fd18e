// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include "mpstr/simd/kernels.hpp"

#if MPSTR_HAVE_X86

#include <immintrin.h>

namespace mpstr::simd::avx2 {

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

}  // namespace

float dot(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  }
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// The output strip stays in registers across the whole k loop.
void row_times_matrix(const float* a, std::size_t k, const float* b, std::size_t ldb,
                      std::size_t m, float* out) {
  std::size_t j = 0;
  for (; j + 32 <= m; j += 32) {
    __m256 o0 = _mm256_loadu_ps(out + j);
    __m256 o1 = _mm256_loadu_ps(out + j + 8);
    __m256 o2 = _mm256_loadu_ps(out + j + 16);
    __m256 o3 = _mm256_loadu_ps(out + j + 24);
    for (std::size_t kk = 0; kk < k; ++kk) {
      if (a[kk] == 0.0f) continue;
      const __m256 s = _mm256_set1_ps(a[kk]);
      const float* brow = b + kk * ldb + j;
      o0 = _mm256_fmadd_ps(s, _mm256_loadu_ps(brow), o0);
      o1 = _mm256_fmadd_ps(s, _mm256_loadu_ps(brow + 8), o1);
      o2 = _mm256_fmadd_ps(s, _mm256_loadu_ps(brow + 16), o2);
      o3 = _mm256_fmadd_ps(s, _mm256_loadu_ps(brow + 24), o3);
    }
    _mm256_storeu_ps(out + j, o0);
    _mm256_storeu_ps(out + j + 8, o1);
    _mm256_storeu_ps(out + j + 16, o2);
    _mm256_storeu_ps(out + j + 24, o3);
  }
  for (; j + 8 <= m; j += 8) {
    __m256 o0 = _mm256_loadu_ps(out + j);
    for (std::size_t kk = 0; kk < k; ++kk) {
      if (a[kk] == 0.0f) continue;
      o0 = _mm256_fmadd_ps(_mm256_set1_ps(a[kk]), _mm256_loadu_ps(b + kk * ldb + j), o0);
    }
    _mm256_storeu_ps(out + j, o0);
  }
  if (j < m) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float s = a[kk];
      if (s == 0.0f) continue;
      const float* brow = b + kk * ldb;
      for (std::size_t jj = j; jj < m; ++jj) out[jj] += s * brow[jj];
    }
  }
}

void row_times_matrix(const double* a, std::size_t k, const double* b, std::size_t ldb,
                      std::size_t m, double* out) {
  std::size_t j = 0;
  for (; j + 16 <= m; j += 16) {
    __m256d o0 = _mm256_loadu_pd(out + j);
    __m256d o1 = _mm256_loadu_pd(out + j + 4);
    __m256d o2 = _mm256_loadu_pd(out + j + 8);
    __m256d o3 = _mm256_loadu_pd(out + j + 12);
    for (std::size_t kk = 0; kk < k; ++kk) {
      if (a[kk] == 0.0) continue;
      const __m256d s = _mm256_set1_pd(a[kk]);
      const double* brow = b + kk * ldb + j;
      o0 = _mm256_fmadd_pd(s, _mm256_loadu_pd(brow), o0);
      o1 = _mm256_fmadd_pd(s, _mm256_loadu_pd(brow + 4), o1);
      o2 = _mm256_fmadd_pd(s, _mm256_loadu_pd(brow + 8), o2);
      o3 = _mm256_fmadd_pd(s, _mm256_loadu_pd(brow + 12), o3);
    }
    _mm256_storeu_pd(out + j, o0);
    _mm256_storeu_pd(out + j + 4, o1);
    _mm256_storeu_pd(out + j + 8, o2);
    _mm256_storeu_pd(out + j + 12, o3);
  }
  for (; j + 4 <= m; j += 4) {
    __m256d o0 = _mm256_loadu_pd(out + j);
    for (std::size_t kk = 0; kk < k; ++kk) {
      if (a[kk] == 0.0) continue;
      o0 = _mm256_fmadd_pd(_mm256_set1_pd(a[kk]), _mm256_loadu_pd(b + kk * ldb + j), o0);
    }
    _mm256_storeu_pd(out + j, o0);
  }
  if (j < m) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double s = a[kk];
      if (s == 0.0) continue;
      const double* brow = b + kk * ldb;
      for (std::size_t jj = j; jj < m; ++jj) out[jj] += s * brow[jj];
    }
  }
}

}  // namespace mpstr::simd::avx2

#endif  // MPSTR_HAVE_X86
