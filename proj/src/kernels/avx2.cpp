// Built with -mavx2; only reached after a runtime CPU check.

#include "sae/kernels/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__)
#include <immintrin.h>

namespace sae::kernels {

namespace {

inline double horizontal_sum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double s = horizontal_sum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(
        acc0, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(x + i + 4),
                                             _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_add_pd(
        acc0, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  double s = horizontal_sum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double weighted_sum_squares_avx2(const double* w, const double* x,
                                 std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d xv = _mm256_loadu_pd(x + i);
    acc = _mm256_add_pd(
        acc, _mm256_mul_pd(_mm256_mul_pd(_mm256_loadu_pd(w + i), xv), xv));
  }
  double s = horizontal_sum(acc);
  for (; i < n; ++i) s += w[i] * x[i] * x[i];
  return s;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d r = _mm256_add_pd(_mm256_loadu_pd(y + i),
                              _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, r);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void multiply_avx2(const double* x, const double* y, double* out,
                   std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

double edge_squared_differences_avx2(const double* u, const std::int32_t* from,
                                     const std::int32_t* to,
                                     std::size_t edges) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t e = 0;
  for (; e + 4 <= edges; e += 4) {
    __m128i fi = _mm_loadu_si128(reinterpret_cast<const __m128i*>(from + e));
    __m128i ti = _mm_loadu_si128(reinterpret_cast<const __m128i*>(to + e));
    __m256d d = _mm256_sub_pd(_mm256_i32gather_pd(u, fi, 8),
                              _mm256_i32gather_pd(u, ti, 8));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double s = horizontal_sum(acc);
  for (; e < edges; ++e) {
    double d = u[from[e]] - u[to[e]];
    s += d * d;
  }
  return s;
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{
      sum_avx2,  dot_avx2,      weighted_sum_squares_avx2,
      axpy_avx2, multiply_avx2, edge_squared_differences_avx2,
  };
  return &table;
}

}  // namespace sae::kernels

#else

namespace sae::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace sae::kernels

#endif
