#include "etdlab/kernels.hpp"

// Scalar reference kernels. The reductions run four independent accumulators
// over stride-4 lanes and combine them as (acc0+acc2)+(acc1+acc3), the same
// association the SIMD backends use for their horizontal sums.

namespace etdlab::kernels {
namespace {

double dot_impl(const double* a, const double* b, std::size_t n) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4) {
    acc0 += a[i] * b[i];
    acc1 += a[i + 1] * b[i + 1];
    acc2 += a[i + 2] * b[i + 2];
    acc3 += a[i + 3] * b[i + 3];
  }
  double sum = (acc0 + acc2) + (acc1 + acc3);
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

double sum_sq_impl(const double* a, std::size_t n) { return dot_impl(a, a, n); }

void axpy_impl(double* y, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_impl(double* out, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_impl(double* out, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_impl(double* out, const double* a, double alpha, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * alpha;
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

const Backend kScalar = {
    "scalar",        dot_impl,       sum_sq_impl,    axpy_impl,     add_impl,
    mul_impl,        scale_impl,     matmul_nn_impl, matmul_nt_impl,
    matmul_tn_impl,
};

}  // namespace

const Backend& scalar_backend() { return kScalar; }

}  // namespace etdlab::kernels
