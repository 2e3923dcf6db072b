#pragma once

#include <cstddef>
#include <vector>

namespace kdlab {

// Dense kernels shared by the forward and backward passes. The k-outer
// accumulation order in gemm_nn vectorizes well without -ffast-math; the
// transposed variants pack the transposed operand and reuse the same loop,
// which is much faster than strided dot products on this op mix.

template <typename T>
void transpose(const T* src, T* dst, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
        }
    }
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n) {
    std::vector<T> bt(static_cast<size_t>(k) * n);
    transpose(b, bt.data(), n, k);
    gemm_nn(a, bt.data(), c, m, k, n);
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
    std::vector<T> at(static_cast<size_t>(k) * m);
    transpose(a, at.data(), m, k);
    gemm_nn(at.data(), b, c, k, m, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

}  // namespace kdlab
