#include "mpstr/simd/kernels.hpp"

namespace mpstr::simd::scalar {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void row_times_matrix(const T* a, std::size_t k, const T* b, std::size_t ldb, std::size_t m,
                      T* out) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T s = a[kk];
    if (s == T{0}) continue;
    const T* brow = b + kk * ldb;
    for (std::size_t j = 0; j < m; ++j) out[j] += s * brow[j];
  }
}

template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);
template void row_times_matrix<float>(const float*, std::size_t, const float*, std::size_t,
                                      std::size_t, float*);
template void row_times_matrix<double>(const double*, std::size_t, const double*, std::size_t,
                                       std::size_t, double*);

}  // namespace mpstr::simd::scalar
