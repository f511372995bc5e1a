#pragma once

#include <cstddef>
#include <vector>

// Row-major GEMM kernels with float64 accumulation. Each output element is
// produced by a fixed sequence of additions, so results do not depend on
// blocking or thread count.

namespace s2tl::kernels {

/// C[m,n] (+)= A[m,k] · B[k,n]
void mm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate);

/// C[m,n] (+)= A[m,k] · B[n,k]^T
void mm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate);

/// C[k,n] (+)= A[m,k]^T · B[m,n]
void mm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate);

void transpose2d(const float* src, float* dst, std::size_t rows, std::size_t cols);

}  // namespace s2tl::kernels
