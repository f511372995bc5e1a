#include "kernels.hpp"

#include <algorithm>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace s2tl::kernels {

namespace {

#if defined(__AVX512F__)

// C[R x up-to-16] tile held in double registers for the whole k loop.
template <int R>
void tile16(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
            std::size_t ldc, std::size_t k, std::size_t cols, bool accumulate) {
  const __mmask16 mask = cols >= 16 ? static_cast<__mmask16>(0xFFFF)
                                    : static_cast<__mmask16>((1u << cols) - 1);
  __m512d lo[R], hi[R];
  for (int r = 0; r < R; ++r) lo[r] = hi[r] = _mm512_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m512 bv = _mm512_maskz_loadu_ps(mask, b + p * ldb);
    const __m512d b0 = _mm512_cvtps_pd(_mm512_castps512_ps256(bv));
    const __m512d b1 = _mm512_cvtps_pd(_mm256_castpd_ps(_mm512_extractf64x4_pd(_mm512_castps_pd(bv), 1)));
    for (int r = 0; r < R; ++r) {
      const __m512d av = _mm512_set1_pd(a[r * lda + p]);
      lo[r] = _mm512_fmadd_pd(av, b0, lo[r]);
      hi[r] = _mm512_fmadd_pd(av, b1, hi[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    __m512 out = _mm512_insertf32x8(_mm512_castps256_ps512(_mm512_cvtpd_ps(lo[r])),
                                    _mm512_cvtpd_ps(hi[r]), 1);
    float* crow = c + r * ldc;
    if (accumulate) out = _mm512_add_ps(out, _mm512_maskz_loadu_ps(mask, crow));
    _mm512_mask_storeu_ps(crow, mask, out);
  }
}

template <int R>
void row_block(const float* a, const float* b, float* c, std::size_t k, std::size_t n,
               bool accumulate) {
  for (std::size_t j = 0; j < n; j += 16)
    tile16<R>(a, k, b + j, n, c + j, n, k, std::min<std::size_t>(16, n - j), accumulate);
}

#else

template <int R>
void row_block(const float* a, const float* b, float* c, std::size_t k, std::size_t n,
               bool accumulate) {
  constexpr std::size_t kCols = 16;
  double acc[R][kCols];
  for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
    const std::size_t cols = std::min(kCols, n - j0);
    for (int r = 0; r < R; ++r)
      for (std::size_t j = 0; j < kCols; ++j) acc[r][j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const float* brow = b + p * n + j0;
      for (int r = 0; r < R; ++r) {
        const double av = a[r * k + p];
        for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * brow[j];
      }
    }
    for (int r = 0; r < R; ++r) {
      float* crow = c + r * n + j0;
      for (std::size_t j = 0; j < cols; ++j)
        crow[j] = accumulate ? crow[j] + static_cast<float>(acc[r][j]) : static_cast<float>(acc[r][j]);
    }
  }
}

#endif

}  // namespace

void mm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
  if (n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, 0.0f);
    return;
  }
  std::size_t i = 0;
  for (; i + 8 <= m; i += 8) row_block<8>(a + i * k, b, c + i * n, k, n, accumulate);
  if (i + 4 <= m) {
    row_block<4>(a + i * k, b, c + i * n, k, n, accumulate);
    i += 4;
  }
  for (; i < m; ++i) row_block<1>(a + i * k, b, c + i * n, k, n, accumulate);
}

void transpose2d(const float* src, float* dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t cc = c0; cc < c1; ++cc) dst[cc * rows + r] = src[r * cols + cc];
    }
  }
}

void mm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
  std::vector<float> bt(k * n);
  transpose2d(b, bt.data(), n, k);
  mm_nn(a, bt.data(), c, m, k, n, accumulate);
}

void mm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
  std::vector<float> at(k * m);
  transpose2d(a, at.data(), m, k);
  mm_nn(at.data(), b, c, k, m, n, accumulate);
}

}  // namespace s2tl::kernels
