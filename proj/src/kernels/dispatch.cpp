#include <atomic>
#include <cstdlib>
#include <string>

#include "dpmix/kernels.hpp"
#include "kernels_impl.hpp"

namespace dpmix::simd {

namespace {

constexpr KernelTable kScalar{Isa::scalar, detail::dot_scalar, detail::sum_sq_scalar,
                              detail::axpy_scalar, detail::axpby_scalar};

#if defined(DPMIX_HAVE_AVX2)
constexpr KernelTable kAvx2{Isa::avx2, detail::dot_avx2, detail::sum_sq_avx2,
                            detail::axpy_avx2, detail::axpby_avx2};
#endif

#if defined(DPMIX_HAVE_NEON)
constexpr KernelTable kNeon{Isa::neon, detail::dot_neon, detail::sum_sq_neon,
                            detail::axpy_neon, detail::axpby_neon};
#endif

const KernelTable* best_available() {
  if (const auto* t = avx2_table()) return t;
  if (const auto* t = neon_table()) return t;
  return &kScalar;
}

const KernelTable* initial_table() {
  const char* env = std::getenv("DPMIX_SIMD");
  if (env != nullptr) {
    const std::string want(env);
    if (want == "scalar") return &kScalar;
    if (want == "avx2" && avx2_table() != nullptr) return avx2_table();
    if (want == "neon" && neon_table() != nullptr) return neon_table();
  }
  return best_available();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(DPMIX_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(DPMIX_HAVE_NEON)
  // Advanced SIMD is mandatory on aarch64.
  return &kNeon;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(Isa isa) {
  const KernelTable* t = nullptr;
  switch (isa) {
    case Isa::scalar: t = &kScalar; break;
    case Isa::avx2: t = avx2_table(); break;
    case Isa::neon: t = neon_table(); break;
  }
  if (t == nullptr) return false;
  current().store(t, std::memory_order_relaxed);
  return true;
}

}  // namespace dpmix::simd
