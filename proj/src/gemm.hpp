#pragma once

#include <cstdint>

namespace attnseg::detail {

// Accumulating row-major matrix kernels, C += op(A)·op(B). Loop orders keep
// the innermost index contiguous so -O3 can vectorize them.

// C[M×N] += A[M×K]·B[K×N]
inline void gemm_nn(int64_t m, int64_t n, int64_t k,
                    const double* a, const double* b, double* c) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[M×N] += A[M×K]·B[N×K]^T
inline void gemm_nt(int64_t m, int64_t n, int64_t k,
                    const double* a, const double* b, double* c) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            crow[j] += acc;
        }
    }
}

// C[M×N] += A[K×M]^T·B[K×N]
inline void gemm_tn(int64_t m, int64_t n, int64_t k,
                    const double* a, const double* b, double* c) {
    for (int64_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

} // namespace attnseg::detail
