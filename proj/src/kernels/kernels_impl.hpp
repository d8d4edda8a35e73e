#pragma once

#include <cstddef>

namespace dpmix::simd::detail {

double dot_scalar(const double* a, const double* b, std::size_t n);
double sum_sq_scalar(const double* a, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
void axpby_scalar(double alpha, const double* x, double beta, const double* y,
                  double* out, std::size_t n);

#if defined(DPMIX_HAVE_AVX2)
double dot_avx2(const double* a, const double* b, std::size_t n);
double sum_sq_avx2(const double* a, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
void axpby_avx2(double alpha, const double* x, double beta, const double* y,
                double* out, std::size_t n);
#endif

#if defined(DPMIX_HAVE_NEON)
double dot_neon(const double* a, const double* b, std::size_t n);
double sum_sq_neon(const double* a, std::size_t n);
void axpy_neon(double alpha, const double* x, double* y, std::size_t n);
void axpby_neon(double alpha, const double* x, double beta, const double* y,
                double* out, std::size_t n);
#endif

}  // namespace dpmix::simd::detail
