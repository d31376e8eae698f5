#include "etdlab/kernels.hpp"

#ifdef __AVX2__

#include <immintrin.h>

// AVX2 variants. Deliberately mul+add (no FMA): each operation rounds the
// same way as the scalar reference, so outputs are bit-identical to it.

namespace etdlab::kernels {
namespace avx2 {
namespace {

inline double hsum(__m256d acc) {
  __m128d lo = _mm256_castpd256_pd128(acc);      // {l0, l1}
  __m128d hi = _mm256_extractf128_pd(acc, 1);    // {l2, l3}
  __m128d s = _mm_add_pd(lo, hi);                // {l0+l2, l1+l3}
  return _mm_cvtsd_f64(s) + _mm_cvtsd_f64(_mm_unpackhi_pd(s, s));
}

double dot_impl(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4) {
    __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_add_pd(acc, prod);
  }
  double sum = hsum(acc);
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

double sum_sq_impl(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4) {
    __m256d v = _mm256_loadu_pd(a + i);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(v, v));
  }
  double sum = hsum(acc);
  for (; i < n; ++i) sum += a[i] * a[i];
  return sum;
}

void axpy_impl(double* y, double alpha, const double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4) {
    __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_impl(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_impl(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_impl(double* out, const double* a, double alpha, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), va));
  for (; i < n; ++i) out[i] = a[i] * alpha;
}

void matmul_nn_impl(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + i * k;
    for (std::size_t l = 0; l < k; ++l) axpy_impl(crow, arow[l], b + l * n, n);
  }
}

void matmul_nt_impl(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = dot_impl(arow, b + j * k, k);
  }
}

void matmul_tn_impl(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < k * n; ++i) c[i] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t l = 0; l < k; ++l) axpy_impl(c + l * n, arow[l], brow, n);
  }
}

}  // namespace

const Backend kBackend = {
    "avx2",          dot_impl,       sum_sq_impl,    axpy_impl,     add_impl,
    mul_impl,        scale_impl,     matmul_nn_impl, matmul_nt_impl,
    matmul_tn_impl,
};

}  // namespace avx2

const Backend& avx2_backend() { return avx2::kBackend; }

}  // namespace etdlab::kernels

#endif  // __AVX2__
