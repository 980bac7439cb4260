#pragma once

// Dense inner-loop kernels with a scalar reference implementation and an
// AVX2/FMA implementation selected at runtime. Every table entry of the AVX2
// variant is equivalence-tested against the scalar one.

#include <cstddef>
#include <string_view>

namespace maeface::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best instruction set supported by the running CPU.
Isa detected_isa();

/// Instruction set used by kernels<T>(). Defaults to detected_isa() unless the
/// MAEFACE_ISA environment variable names another supported one.
Isa active_isa();

/// Throws std::invalid_argument if the CPU cannot run `isa`.
void set_active_isa(Isa isa);

template <typename T>
struct KernelTable {
  // C[m,n] = A[m,k] * B[k,n], or C += A*B when accumulate is set.
  // Leading dimensions are row strides in elements.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
               const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
  T (*dot)(const T* x, const T* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  void (*add)(std::size_t n, const T* x, const T* y, T* out);
  void (*mul)(std::size_t n, const T* x, const T* y, T* out);
  void (*scale)(std::size_t n, T alpha, const T* x, T* out);
  T (*sum)(const T* x, std::size_t n);
};

template <typename T>
const KernelTable<T>& kernels();

template <typename T>
const KernelTable<T>& kernels(Isa isa);

namespace scalar {
template <typename T>
const KernelTable<T>& table();
}  // namespace scalar

namespace avx2 {
template <typename T>
const KernelTable<T>& table();
}  // namespace avx2

// out[c, r] = in[r, c]
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

}  // namespace maeface::simd
