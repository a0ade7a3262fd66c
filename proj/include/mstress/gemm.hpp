#pragma once
// Accumulating matrix-product kernels, C += op(A) op(B). The shared inner
// shape streams over contiguous C rows while four A entries are broadcast,
// so each C load/store amortizes four fused multiply-adds. Summation order
// is a fixed function of the shapes, never of the data or its addresses,
// which keeps results bit-identical across runs.

#include <cstdint>
#include <vector>

namespace mstress {

// C[n,m] += A[n,k] * B[k,m]
inline void gemm_nn(int32_t n, int32_t k, int32_t m, const double* A,
                    const double* B, double* C) {
  const int32_t k4 = k & ~int32_t(3);
  for (int32_t i = 0; i < n; ++i) {
    const double* a_row = A + int64_t(i) * k;
    double* c_row = C + int64_t(i) * m;
    for (int32_t p = 0; p < k4; p += 4) {
      const double a0 = a_row[p], a1 = a_row[p + 1];
      const double a2 = a_row[p + 2], a3 = a_row[p + 3];
      const double* b0 = B + int64_t(p) * m;
      const double* b1 = b0 + m;
      const double* b2 = b1 + m;
      const double* b3 = b2 + m;
      for (int32_t j = 0; j < m; ++j)
        c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (int32_t p = k4; p < k; ++p) {
      const double a = a_row[p];
      const double* b_row = B + int64_t(p) * m;
      for (int32_t j = 0; j < m; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// C[n,m] += A[n,k] * B[m,k]^T. B is transposed into a scratch buffer so
// the product runs through the same broadcast shape as gemm_nn; per-element
// sums are therefore grouped identically, preserving fixed summation order.
inline void gemm_nt(int32_t n, int32_t k, int32_t m, const double* A,
                    const double* B, double* C) {
  thread_local std::vector<double> scratch;
  scratch.resize(size_t(k) * size_t(m));
  for (int32_t j = 0; j < m; ++j)
    for (int32_t p = 0; p < k; ++p)
      scratch[size_t(p) * size_t(m) + size_t(j)] = B[int64_t(j) * k + p];
  gemm_nn(n, k, m, A, scratch.data(), C);
}

// C[n,m] += A[k,n]^T * B[k,m]
inline void gemm_tn(int32_t n, int32_t k, int32_t m, const double* A,
                    const double* B, double* C) {
  const int32_t k4 = k & ~int32_t(3);
  for (int32_t p = 0; p < k4; p += 4) {
    const double* a0 = A + int64_t(p) * n;
    const double* a1 = a0 + n;
    const double* a2 = a1 + n;
    const double* a3 = a2 + n;
    const double* b0 = B + int64_t(p) * m;
    const double* b1 = b0 + m;
    const double* b2 = b1 + m;
    const double* b3 = b2 + m;
    for (int32_t i = 0; i < n; ++i) {
      const double v0 = a0[i], v1 = a1[i], v2 = a2[i], v3 = a3[i];
      double* c_row = C + int64_t(i) * m;
      for (int32_t j = 0; j < m; ++j)
        c_row[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
    }
  }
  for (int32_t p = k4; p < k; ++p) {
    const double* a_row = A + int64_t(p) * n;
    const double* b_row = B + int64_t(p) * m;
    for (int32_t i = 0; i < n; ++i) {
      const double a = a_row[i];
      double* c_row = C + int64_t(i) * m;
      for (int32_t j = 0; j < m; ++j) c_row[j] += a * b_row[j];
    }
  }
}

}  // namespace mstress
