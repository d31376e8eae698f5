#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "etdlab/kernels.hpp"

namespace etdlab::kernels {

#ifdef ETDLAB_HAVE_AVX2
const Backend& avx2_backend();
#endif
#ifdef ETDLAB_HAVE_NEON
const Backend& neon_backend();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

std::atomic<const Backend*> g_active{nullptr};

const Backend* resolve() {
  const char* env = std::getenv("ETD_LAB_SIMD");
  const char* want = env ? env : "auto";
  if (std::strcmp(want, "scalar") == 0) return &scalar_backend();
#ifdef ETDLAB_HAVE_AVX2
  if (std::strcmp(want, "avx2") == 0) {
    if (cpu_has_avx2()) return &avx2_backend();
    std::fprintf(stderr, "ETD_LAB_SIMD=avx2 requested but CPU lacks AVX2; using scalar\n");
    return &scalar_backend();
  }
#endif
#ifdef ETDLAB_HAVE_NEON
  if (std::strcmp(want, "neon") == 0) return &neon_backend();
#endif
  if (std::strcmp(want, "auto") != 0) {
    std::fprintf(stderr, "unknown ETD_LAB_SIMD value '%s'; using auto\n", want);
  }
#ifdef ETDLAB_HAVE_AVX2
  if (cpu_has_avx2()) return &avx2_backend();
#endif
#ifdef ETDLAB_HAVE_NEON
  return &neon_backend();
#endif
  return &scalar_backend();
}

}  // namespace

const Backend& active() {
  const Backend* b = g_active.load(std::memory_order_acquire);
  if (b == nullptr) {
    b = resolve();
    g_active.store(b, std::memory_order_release);
  }
  return *b;
}

void force(const Backend& b) { g_active.store(&b, std::memory_order_release); }

std::vector<const Backend*> available() {
  std::vector<const Backend*> out{&scalar_backend()};
#ifdef ETDLAB_HAVE_AVX2
  if (cpu_has_avx2()) out.push_back(&avx2_backend());
#endif
#ifdef ETDLAB_HAVE_NEON
  out.push_back(&neon_backend());
#endif
  return out;
}

}  // namespace etdlab::kernels
