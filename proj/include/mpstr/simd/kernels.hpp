#pragma once

// Inner-loop kernels used by the tensor ops. Every kernel has a portable
// scalar reference and an AVX2/FMA variant; the variant is picked once at
// runtime from CPUID and can be pinned for equivalence testing.

#include <cstddef>
#include <string_view>

namespace mpstr::simd {

enum class Isa { kScalar, kAvx2 };

template <typename T>
struct KernelTable {
  // sum_i a[i] * b[i]
  T (*dot)(const T* a, const T* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // out[j] += sum_k a[k] * b[k * ldb + j] for j < m
  void (*row_times_matrix)(const T* a, std::size_t k, const T* b, std::size_t ldb,
                           std::size_t m, T* out);
  std::string_view name;
};

bool avx2_supported();

// Table for a specific ISA. Requesting kAvx2 on a machine without it
// returns the scalar table.
template <typename T>
const KernelTable<T>& kernels_for(Isa isa);

// Table used by the library. Defaults to the best supported ISA; the
// MPSTR_FORCE_SCALAR environment variable pins the scalar path.
template <typename T>
const KernelTable<T>& active_kernels();

Isa active_isa();
void set_active_isa(Isa isa);

namespace scalar {
template <typename T>
T dot(const T* a, const T* b, std::size_t n);
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
template <typename T>
void row_times_matrix(const T* a, std::size_t k, const T* b, std::size_t ldb, std::size_t m,
                      T* out);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define MPSTR_HAVE_X86 1
namespace avx2 {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void row_times_matrix(const float* a, std::size_t k, const float* b, std::size_t ldb,
                      std::size_t m, float* out);
void row_times_matrix(const double* a, std::size_t k, const double* b, std::size_t ldb,
                      std::size_t m, double* out);
}  // namespace avx2
#else
#define MPSTR_HAVE_X86 0
#endif

}  // namespace mpstr::simd
