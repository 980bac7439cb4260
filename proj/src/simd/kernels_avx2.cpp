// Compiled with -mavx2 -mfma; only reached through the runtime dispatcher
// after the CPU has been checked for both extensions.

#include <immintrin.h>

#include <algorithm>

#include "maeface/simd/kernels.hpp"

namespace maeface::simd::avx2 {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float v) { return _mm256_set1_ps(v); }
  static reg zero() { return _mm256_setzero_ps(); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double v) { return _mm256_set1_pd(v); }
  static reg zero() { return _mm256_setzero_pd(); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

constexpr std::size_t kRowBlock = 6;
constexpr std::size_t kDepthBlock = 256;
constexpr std::size_t kColBlock = 512;

// MR rows x (2 * width) columns of C.
template <typename T, std::size_t MR>
inline void micro_wide(std::size_t kc, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                       std::size_t ldc, bool load_c) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  typename V::reg acc0[MR];
  typename V::reg acc1[MR];
  for (std::size_t r = 0; r < MR; ++r) {
    acc0[r] = load_c ? V::load(c + r * ldc) : V::zero();
    acc1[r] = load_c ? V::load(c + r * ldc + W) : V::zero();
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const typename V::reg b0 = V::load(b + p * ldb);
    const typename V::reg b1 = V::load(b + p * ldb + W);
    for (std::size_t r = 0; r < MR; ++r) {
      const typename V::reg av = V::set1(a[r * lda + p]);
      acc0[r] = V::fmadd(av, b0, acc0[r]);
      acc1[r] = V::fmadd(av, b1, acc1[r]);
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    V::store(c + r * ldc, acc0[r]);
    V::store(c + r * ldc + W, acc1[r]);
  }
}

// MR rows x width columns.
template <typename T, std::size_t MR>
inline void micro_narrow(std::size_t kc, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                         std::size_t ldc, bool load_c) {
  using V = Vec<T>;
  typename V::reg acc[MR];
  for (std::size_t r = 0; r < MR; ++r) acc[r] = load_c ? V::load(c + r * ldc) : V::zero();
  for (std::size_t p = 0; p < kc; ++p) {
    const typename V::reg bv = V::load(b + p * ldb);
    for (std::size_t r = 0; r < MR; ++r) acc[r] = V::fmadd(V::set1(a[r * lda + p]), bv, acc[r]);
  }
  for (std::size_t r = 0; r < MR; ++r) V::store(c + r * ldc, acc[r]);
}

template <typename T>
inline void micro_tail(std::size_t mr, std::size_t nr, std::size_t kc, const T* a, std::size_t lda,
                       const T* b, std::size_t ldb, T* c, std::size_t ldc, bool load_c) {
  for (std::size_t r = 0; r < mr; ++r) {
    for (std::size_t j = 0; j < nr; ++j) {
      T acc = load_c ? c[r * ldc + j] : T(0);
      for (std::size_t p = 0; p < kc; ++p) acc += a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] = acc;
    }
  }
}

template <typename T, std::size_t MR>
inline void row_panel(std::size_t nc, std::size_t kc, const T* a, std::size_t lda, const T* b,
                      std::size_t ldb, T* c, std::size_t ldc, bool load_c) {
  constexpr std::size_t W = Vec<T>::width;
  std::size_t j = 0;
  for (; j + 2 * W <= nc; j += 2 * W) micro_wide<T, MR>(kc, a, lda, b + j, ldb, c + j, ldc, load_c);
  for (; j + W <= nc; j += W) micro_narrow<T, MR>(kc, a, lda, b + j, ldb, c + j, ldc, load_c);
  if (j < nc) micro_tail<T>(MR, nc - j, kc, a, lda, b + j, ldb, c + j, ldc, load_c);
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T(0));
    }
    return;
  }
  for (std::size_t jc = 0; jc < n; jc += kColBlock) {
    const std::size_t nc = std::min(kColBlock, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kDepthBlock) {
      const std::size_t kc = std::min(kDepthBlock, k - pc);
      const bool load_c = accumulate || pc > 0;
      const T* bp = b + pc * ldb + jc;
      std::size_t i = 0;
      for (; i + kRowBlock <= m; i += kRowBlock) {
        row_panel<T, kRowBlock>(nc, kc, a + i * lda + pc, lda, bp, ldb, c + i * ldc + jc, ldc, load_c);
      }
      const T* ap = a + i * lda + pc;
      T* cp = c + i * ldc + jc;
      switch (m - i) {
        case 5: row_panel<T, 5>(nc, kc, ap, lda, bp, ldb, cp, ldc, load_c); break;
        case 4: row_panel<T, 4>(nc, kc, ap, lda, bp, ldb, cp, ldc, load_c); break;
        case 3: row_panel<T, 3>(nc, kc, ap, lda, bp, ldb, cp, ldc, load_c); break;
        case 2: row_panel<T, 2>(nc, kc, ap, lda, bp, ldb, cp, ldc, load_c); break;
        case 1: row_panel<T, 1>(nc, kc, ap, lda, bp, ldb, cp, ldc, load_c); break;
        default: break;
      }
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  typename V::reg s0 = V::zero(), s1 = V::zero(), s2 = V::zero(), s3 = V::zero();
  std::size_t i = 0;
  for (; i + 4 * W <= n; i += 4 * W) {
    s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
    s1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), s1);
    s2 = V::fmadd(V::load(x + i + 2 * W), V::load(y + i + 2 * W), s2);
    s3 = V::fmadd(V::load(x + i + 3 * W), V::load(y + i + 3 * W), s3);
  }
  for (; i + W <= n; i += W) s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
  T acc = V::hsum(V::add(V::add(s0, s1), V::add(s2, s3)));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
T sum(const T* x, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  typename V::reg s0 = V::zero(), s1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    s0 = V::add(V::load(x + i), s0);
    s1 = V::add(V::load(x + i + W), s1);
  }
  for (; i + W <= n; i += W) s0 = V::add(V::load(x + i), s0);
  T acc = V::hsum(V::add(s0, s1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  const typename V::reg av = V::set1(alpha);
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void add(std::size_t n, const T* x, const T* y, T* out) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(out + i, V::add(V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

template <typename T>
void mul(std::size_t n, const T* x, const T* y, T* out) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(out + i, V::mul(V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

template <typename T>
void scale(std::size_t n, T alpha, const T* x, T* out) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  const typename V::reg av = V::set1(alpha);
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(out + i, V::mul(av, V::load(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

}  // namespace

template <typename T>
const KernelTable<T>& table() {
  static const KernelTable<T> t{&gemm<T>, &dot<T>, &axpy<T>, &add<T>, &mul<T>, &scale<T>, &sum<T>};
  return t;
}

template const KernelTable<float>& table<float>();
template const KernelTable<double>& table<double>();

}  // namespace maeface::simd::avx2
