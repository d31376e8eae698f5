#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "etdlab/kernels.hpp"
#include "testutil.hpp"

using namespace etdlab;
using namespace testutil;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

const std::vector<size_t> kSizes = {0, 1, 2, 3, 4, 5, 7, 8, 15, 16, 33, 64, 67, 100, 257};

}  // namespace

TEST_CASE("every compiled backend matches the scalar reference bit for bit") {
  const auto backends = kernels::available();
  REQUIRE(backends.size() >= 1);
  Rng rng(1234);
  for (const kernels::Backend* b : backends) {
    CAPTURE(b->name);
    for (size_t n : kSizes) {
      auto x = random_vec(n, rng);
      auto y = random_vec(n, rng);
      CHECK(b->dot(x.data(), y.data(), n) ==
            kernels::scalar_backend().dot(x.data(), y.data(), n));
      CHECK(b->sum_sq(x.data(), n) == kernels::scalar_backend().sum_sq(x.data(), n));

      auto out_a = random_vec(n, rng);
      auto out_b = out_a;
      b->axpy(out_a.data(), 1.7, x.data(), n);
      kernels::scalar_backend().axpy(out_b.data(), 1.7, x.data(), n);
      CHECK(bit_equal(out_a, out_b));

      std::vector<double> r1(n), r2(n);
      b->add(r1.data(), x.data(), y.data(), n);
      kernels::scalar_backend().add(r2.data(), x.data(), y.data(), n);
      CHECK(bit_equal(r1, r2));
      b->mul(r1.data(), x.data(), y.data(), n);
      kernels::scalar_backend().mul(r2.data(), x.data(), y.data(), n);
      CHECK(bit_equal(r1, r2));
      b->scale(r1.data(), x.data(), -0.3, n);
      kernels::scalar_backend().scale(r2.data(), x.data(), -0.3, n);
      CHECK(bit_equal(r1, r2));
    }
  }
}

TEST_CASE("matrix products agree bitwise across backends") {
  Rng rng(99);
  const auto backends = kernels::available();
  for (const kernels::Backend* b : backends) {
    CAPTURE(b->name);
    for (auto [m, k, n] : std::vector<std::tuple<size_t, size_t, size_t>>{
             {1, 1, 1}, {2, 3, 4}, {5, 7, 3}, {8, 16, 8}, {13, 64, 9}}) {
      auto a = random_vec(m * k, rng);
      auto bb = random_vec(k * n, rng);
      auto bt = random_vec(n * k, rng);
      auto big = random_vec(m * n, rng);
      std::vector<double> c1(m * n), c2(m * n);
      b->matmul_nn(c1.data(), a.data(), bb.data(), m, k, n);
      kernels::scalar_backend().matmul_nn(c2.data(), a.data(), bb.data(), m, k, n);
      CHECK(bit_equal(c1, c2));
      b->matmul_nt(c1.data(), a.data(), bt.data(), m, k, n);
      kernels::scalar_backend().matmul_nt(c2.data(), a.data(), bt.data(), m, k, n);
      CHECK(bit_equal(c1, c2));
      std::vector<double> t1(k * n), t2(k * n);
      b->matmul_tn(t1.data(), a.data(), big.data(), m, k, n);
      kernels::scalar_backend().matmul_tn(t2.data(), a.data(), big.data(), m, k, n);
      CHECK(bit_equal(t1, t2));
    }
  }
}

TEST_CASE("matmul_nn matches a naive triple loop") {
  Rng rng(7);
  const size_t m = 6, k = 9, n = 5;
  auto a = random_vec(m * k, rng);
  auto b = random_vec(k * n, rng);
  std::vector<double> c(m * n), naive(m * n, 0.0);
  kernels::active().matmul_nn(c.data(), a.data(), b.data(), m, k, n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j)
      for (size_t l = 0; l < k; ++l) naive[i * n + j] += a[i * k + l] * b[l * n + j];
  CHECK(max_abs_diff(c, naive) < 1e-12);
}

TEST_CASE("transposed variants are consistent with explicit transposes") {
  Rng rng(8);
  const size_t m = 4, k = 6, n = 3;
  auto a = random_vec(m * k, rng);
  auto b = random_vec(k * n, rng);
  std::vector<double> bt(n * k);
  for (size_t i = 0; i < k; ++i)
    for (size_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
  std::vector<double> c_nn(m * n), c_nt(m * n);
  kernels::active().matmul_nn(c_nn.data(), a.data(), b.data(), m, k, n);
  kernels::active().matmul_nt(c_nt.data(), a.data(), bt.data(), m, k, n);
  CHECK(max_abs_diff(c_nn, c_nt) < 1e-12);

  std::vector<double> at(k * m);
  for (size_t i = 0; i < m; ++i)
    for (size_t l = 0; l < k; ++l) at[l * m + i] = a[i * k + l];
  auto d = random_vec(m * n, rng);
  std::vector<double> c_tn(k * n), c_ref(k * n);
  kernels::active().matmul_tn(c_tn.data(), a.data(), d.data(), m, k, n);
  kernels::active().matmul_nn(c_ref.data(), at.data(), d.data(), k, m, n);
  CHECK(max_abs_diff(c_tn, c_ref) < 1e-12);
}

TEST_CASE("dot matches sequential summation within rounding") {
  Rng rng(21);
  auto x = random_vec(1031, rng);
  auto y = random_vec(1031, rng);
  double seq = 0.0;
  for (size_t i = 0; i < x.size(); ++i) seq += x[i] * y[i];
  CHECK(rel_err(kernels::active().dot(x.data(), y.data(), x.size()), seq) < 1e-12);
}

TEST_CASE("force overrides the active backend") {
  const kernels::Backend& prev = kernels::active();
  kernels::force(kernels::scalar_backend());
  CHECK(std::string(kernels::active().name) == "scalar");
  kernels::force(prev);
  CHECK(std::string(kernels::active().name) == std::string(prev.name));
}
