#pragma once

// Dense vector kernels used by every inner loop of the optimizer: the
// logistic-loss dot products, the STORM combinations, noise injection and
// the gossip weighted sums.
//
// Each kernel has a scalar reference implementation and vectorized variants
// (AVX2 on x86-64, NEON on aarch64). The variant is picked once at startup
// from the CPU feature bits and can be pinned with DPMIX_SIMD=scalar|avx2|neon.
//
// Elementwise kernels (axpy, axpby) are bitwise identical across variants:
// they perform the same IEEE operations lane by lane and the build disables
// floating-point contraction. Reductions (dot, sum_sq) use a different
// summation order in the vector paths and agree only to rounding.

#include <cstddef>
#include <span>
#include <string_view>

namespace dpmix::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum_sq)(const double* a, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = alpha * x + beta * y; out may alias x or y
  void (*axpby)(double alpha, const double* x, double beta, const double* y,
                double* out, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Table selected for this process.
const KernelTable& active();

// Overrides the process-wide selection. Returns false (and leaves the
// selection unchanged) when the requested variant is unavailable.
bool select(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline double sum_sq(std::span<const double> a) {
  return active().sum_sq(a.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), y.size());
}

inline void axpby(double alpha, std::span<const double> x, double beta,
                  std::span<const double> y, std::span<double> out) {
  active().axpby(alpha, x.data(), beta, y.data(), out.data(), out.size());
}

}  // namespace dpmix::simd
