#pragma once

// Vector kernels behind all dense arithmetic. Every kernel has a scalar
// reference implementation plus SIMD variants (AVX2 on x86-64, NEON on
// aarch64) selected once at runtime. The environment variable UBSMOE_KERNEL
// ("auto", "scalar", "avx2", "neon") overrides detection.

#include <cstddef>

namespace ubsmoe::kern {

enum class Backend { Scalar, Avx2, Neon };

// Backend used by the dispatching kernels below (resolved on first call).
Backend active_backend();
const char* backend_name(Backend b);

// Forces a backend. Throws ConfigError if it is not available on this CPU.
// Intended for tests and benchmarking.
void force_backend(Backend b);

// y . x
double dot(const double* a, const double* b, std::size_t n);
// y += alpha * x
void axpy(double* y, double alpha, const double* x, std::size_t n);
// x *= alpha
void scal(double* x, double alpha, std::size_t n);
// sum of squares
double nrm2sq(const double* x, std::size_t n);

namespace detail {

double dot_scalar(const double* a, const double* b, std::size_t n);
void axpy_scalar(double* y, double alpha, const double* x, std::size_t n);
void scal_scalar(double* x, double alpha, std::size_t n);
double nrm2sq_scalar(const double* x, std::size_t n);

#if defined(__x86_64__) || defined(_M_X64)
#define UBSMOE_HAVE_AVX2_TU 1
double dot_avx2(const double* a, const double* b, std::size_t n);
void axpy_avx2(double* y, double alpha, const double* x, std::size_t n);
void scal_avx2(double* x, double alpha, std::size_t n);
double nrm2sq_avx2(const double* x, std::size_t n);
#endif

#if defined(__aarch64__)
#define UBSMOE_HAVE_NEON_TU 1
double dot_neon(const double* a, const double* b, std::size_t n);
void axpy_neon(double* y, double alpha, const double* x, std::size_t n);
void scal_neon(double* x, double alpha, std::size_t n);
double nrm2sq_neon(const double* x, std::size_t n);
#endif

}  // namespace detail

}  // namespace ubsmoe::kern
