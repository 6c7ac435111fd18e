#include <atomic>
#include <cstdlib>
#include <string_view>

#include "mpstr/simd/kernels.hpp"

namespace mpstr::simd {

namespace {

template <typename T>
constexpr KernelTable<T> kScalarTable{&scalar::dot<T>, &scalar::axpy<T>,
                                      &scalar::row_times_matrix<T>, "scalar"};

#if MPSTR_HAVE_X86
template <typename T>
T avx2_dot(const T* a, const T* b, std::size_t n) {
  return avx2::dot(a, b, n);
}
template <typename T>
void avx2_axpy(T alpha, const T* x, T* y, std::size_t n) {
  avx2::axpy(alpha, x, y, n);
}
template <typename T>
void avx2_rtm(const T* a, std::size_t k, const T* b, std::size_t ldb, std::size_t m, T* out) {
  avx2::row_times_matrix(a, k, b, ldb, m, out);
}
template <typename T>
constexpr KernelTable<T> kAvx2Table{&avx2_dot<T>, &avx2_axpy<T>, &avx2_rtm<T>, "avx2"};
#endif

Isa detect_default() {
  if (const char* env = std::getenv("MPSTR_FORCE_SCALAR"); env && std::string_view(env) == "1") {
    return Isa::kScalar;
  }
  return avx2_supported() ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> isa{detect_default()};
  return isa;
}

}  // namespace

bool avx2_supported() {
#if MPSTR_HAVE_X86 && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported;
#else
  return false;
#endif
}

template <typename T>
const KernelTable<T>& kernels_for(Isa isa) {
#if MPSTR_HAVE_X86
  if (isa == Isa::kAvx2 && avx2_supported()) return kAvx2Table<T>;
#endif
  (void)isa;
  return kScalarTable<T>;
}

template <typename T>
const KernelTable<T>& active_kernels() {
  return kernels_for<T>(active_slot().load(std::memory_order_relaxed));
}

Isa active_isa() { return active_slot().load(); }

void set_active_isa(Isa isa) {
  active_slot().store(isa == Isa::kAvx2 && !avx2_supported() ? Isa::kScalar : isa);
}

template const KernelTable<float>& kernels_for<float>(Isa);
template const KernelTable<double>& kernels_for<double>(Isa);
template const KernelTable<float>& active_kernels<float>();
template const KernelTable<double>& active_kernels<double>();

}  // namespace mpstr::simd
