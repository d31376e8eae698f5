#pragma once

#include <cstddef>
#include <vector>

namespace etdlab::kernels {

// Double-precision primitives behind the tensor ops. Every backend uses the
// same 4-lane blocked reduction order, so scalar/AVX2/NEON produce
// bit-identical results on identical input. No FMA contraction anywhere:
// each multiply and add rounds separately, matching the scalar reference.
struct Backend {
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum_sq)(const double* a, std::size_t n);
  void (*axpy)(double* y, double alpha, const double* x, std::size_t n);
  void (*add)(double* out, const double* a, const double* b, std::size_t n);
  void (*mul)(double* out, const double* a, const double* b, std::size_t n);
  void (*scale)(double* out, const double* a, double alpha, std::size_t n);

  // Row-major matrix products; output buffers are overwritten.
  //   matmul_nn: c[m,n] = a[m,k] * b[k,n]
  //   matmul_nt: c[m,n] = a[m,k] * b^T, b stored [n,k]
  //   matmul_tn: c[k,n] = a^T * b,      a stored [m,k], b stored [m,n]
  void (*matmul_nn)(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n);
  void (*matmul_nt)(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n);
  void (*matmul_tn)(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n);
};

/// Reference implementation; always available.
const Backend& scalar_backend();

/// Backend selected once per process: honors ETD_LAB_SIMD
/// (scalar|avx2|neon|auto), otherwise the widest ISA this CPU supports.
const Backend& active();

/// Backends compiled in and usable on this machine.
std::vector<const Backend*> available();

/// Test hook: override the active backend.
void force(const Backend& b);

}  // namespace etdlab::kernels
