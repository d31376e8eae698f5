#include "etdlab/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

// NEON variants (2-wide f64). Two vector accumulators cover the same four
// stride lanes as the scalar reference; the combine order matches it:
// (acc0+acc2)+(acc1+acc3). vmul+vadd only, no fused multiply-add.

namespace etdlab::kernels {
namespace neon {
namespace {

double dot_impl(const double* a, const double* b, std::size_t n) {
  float64x2_t acc01 = vdupq_n_f64(0.0);  // lanes 0,1
  float64x2_t acc23 = vdupq_n_f64(0.0);  // lanes 2,3
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4) {
    acc01 = vaddq_f64(acc01, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    acc23 = vaddq_f64(acc23, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
  }
  float64x2_t s = vaddq_f64(acc01, acc23);  // {l0+l2, l1+l3}
  double sum = vgetq_lane_f64(s, 0) + vgetq_lane_f64(s, 1);
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

double sum_sq_impl(const double* a, std::size_t n) { return dot_impl(a, a, n); }

void axpy_impl(double* y, double alpha, const double* x, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  const std::size_t n2 = n & ~std::size_t(1);
  for (; i < n2; i += 2) {
    float64x2_t prod = vmulq_f64(va, vld1q_f64(x + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_impl(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  const std::size_t n2 = n & ~std::size_t(1);
  for (; i < n2; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_impl(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  const std::size_t n2 = n & ~std::size_t(1);
  for (; i < n2; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_impl(double* out, const double* a, double alpha, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  const std::size_t n2 = n & ~std::size_t(1);
  for (; i < n2; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), va));
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
    "neon",          dot_impl,       sum_sq_impl,    axpy_impl,     add_impl,
    mul_impl,        scale_impl,     matmul_nn_impl, matmul_nt_impl,
    matmul_tn_impl,
};

}  // namespace neon

const Backend& neon_backend() { return neon::kBackend; }

}  // namespace etdlab::kernels

#endif  // __aarch64__
