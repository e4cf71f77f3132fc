#pragma once

// Row-major accumulate-only matrix kernels used by matmul and conv2d. Loop
// orders keep the innermost loop contiguous so the compiler can vectorize it.

#include <cstddef>

namespace cwda::detail {

// C(M x N) += A(M x K) * B(K x N)
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Dot product with eight independent partial sums, so the loop vectorizes
// without reassociation. The summation order is fixed, hence deterministic.
inline double dot(const double* x, const double* y, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t p = 0;
  for (; p + 8 <= n; p += 8) {
    for (std::size_t q = 0; q < 8; ++q) acc[q] += x[p + q] * y[p + q];
  }
  double tail = 0.0;
  for (; p < n; ++p) tail += x[p] * y[p];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

// C(M x N) += A(M x K) * B^T, with B stored as (N x K)
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(arow, b + j * k, k);
  }
}

// C(M x N) += A^T * B, with A stored as (K x M) and B as (K x N)
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace cwda::detail
