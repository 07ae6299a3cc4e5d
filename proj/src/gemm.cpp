#include <algorithm>
#include <cstddef>
#include <vector>

#include "earu/ops.hpp"

namespace earu {
namespace {

// Register tile: kRows rows of C by kCols columns, accumulated over a packed
// panel of B.
constexpr std::size_t kRows = 4;
constexpr std::size_t kDepth = 256;
constexpr std::size_t kWidth = 512;

template <typename T>
constexpr std::size_t tile_cols() {
  return 64 / sizeof(T) * 2;
}

template <typename T>
void pack_panel(const T* b, std::size_t ldb, std::size_t kb, std::size_t cols, T* dst) {
  constexpr std::size_t nr = tile_cols<T>();
  for (std::size_t kk = 0; kk < kb; ++kk) {
    const T* row = b + kk * ldb;
    T* out = dst + kk * nr;
    std::size_t j = 0;
    for (; j < cols; ++j) out[j] = row[j];
    for (; j < nr; ++j) out[j] = T(0);
  }
}

template <typename T>
void micro_kernel(std::size_t rows, std::size_t cols, std::size_t kb, const T* a, std::size_t lda,
                  const T* panel, T* c, std::size_t ldc) {
  constexpr std::size_t nr = tile_cols<T>();
  T acc[kRows][nr] = {};
  if (rows == kRows) {
    for (std::size_t kk = 0; kk < kb; ++kk) {
      const T* bp = panel + kk * nr;
      const T a0 = a[kk];
      const T a1 = a[lda + kk];
      const T a2 = a[2 * lda + kk];
      const T a3 = a[3 * lda + kk];
      for (std::size_t j = 0; j < nr; ++j) {
        const T bv = bp[j];
        acc[0][j] += a0 * bv;
        acc[1][j] += a1 * bv;
        acc[2][j] += a2 * bv;
        acc[3][j] += a3 * bv;
      }
    }
  } else {
    for (std::size_t kk = 0; kk < kb; ++kk) {
      const T* bp = panel + kk * nr;
      for (std::size_t r = 0; r < rows; ++r) {
        const T av = a[r * lda + kk];
        for (std::size_t j = 0; j < nr; ++j) acc[r][j] += av * bp[j];
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    T* crow = c + r * ldc;
    for (std::size_t j = 0; j < cols; ++j) crow[j] += acc[r][j];
  }
}

}  // namespace

template <typename T>
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                     std::size_t ldb, T* c, std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  constexpr std::size_t nr = tile_cols<T>();
  thread_local std::vector<T> packed;
  for (std::size_t k0 = 0; k0 < k; k0 += kDepth) {
    const std::size_t kb = std::min(kDepth, k - k0);
    for (std::size_t j0 = 0; j0 < n; j0 += kWidth) {
      const std::size_t nb = std::min(kWidth, n - j0);
      const std::size_t panels = (nb + nr - 1) / nr;
      packed.resize(panels * kb * nr);
      for (std::size_t p = 0; p < panels; ++p) {
        const std::size_t cols = std::min(nr, nb - p * nr);
        pack_panel(b + k0 * ldb + j0 + p * nr, ldb, kb, cols, packed.data() + p * kb * nr);
      }
      for (std::size_t i = 0; i < m; i += kRows) {
        const std::size_t rows = std::min(kRows, m - i);
        for (std::size_t p = 0; p < panels; ++p) {
          const std::size_t cols = std::min(nr, nb - p * nr);
          micro_kernel(rows, cols, kb, a + i * lda + k0, lda, packed.data() + p * kb * nr,
                       c + i * ldc + j0 + p * nr, ldc);
        }
      }
    }
  }
}

template void gemm_accumulate<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                                     const float*, std::size_t, float*, std::size_t);
template void gemm_accumulate<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                                      const double*, std::size_t, double*, std::size_t);

}  // namespace earu
