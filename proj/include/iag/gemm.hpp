#pragma once

// Deterministic GEMM kernels for row-major contiguous matrices.
//
// gemm_acc is the forward kernel: every output element accumulates over k
// strictly in order, independently of the other rows/columns. Two calls that
// share a row therefore produce bit-identical results even when the matrices
// have different row counts -- the property behind the PAD-suffix and
// causality contracts (masked keys contribute exact zero terms).
//
// The *_bt / *_at variants serve backward passes; they only need to be
// deterministic for a fixed shape, not row-stable.

#include <cstddef>

namespace iag {

// C(m,n) += A(m,k) * B(k,n)
template <class T>
void gemm_acc(int m, int n, int k, const T* A, const T* B, T* C) {
    constexpr int JB = 32;
    for (int i = 0; i < m; ++i) {
        const T* a = A + (size_t)i * k;
        T* c = C + (size_t)i * n;
        for (int j0 = 0; j0 < n; j0 += JB) {
            int jb = n - j0 < JB ? n - j0 : JB;
            T acc[JB] = {};
            const T* b = B + j0;
            for (int kk = 0; kk < k; ++kk) {
                T av = a[kk];
                const T* brow = b + (size_t)kk * n;
                for (int j = 0; j < jb; ++j) acc[j] += av * brow[j];
            }
            for (int j = 0; j < jb; ++j) c[j0 + j] += acc[j];
        }
    }
}

// C(m,k) += A(m,n) * B^T where B is (k,n): row-by-row dot products.
template <class T>
void gemm_bt_acc(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int i = 0; i < m; ++i) {
        const T* a = A + (size_t)i * n;
        T* c = C + (size_t)i * k;
        for (int j = 0; j < k; ++j) {
            const T* b = B + (size_t)j * n;
            T acc = T(0);
            for (int nn = 0; nn < n; ++nn) acc += a[nn] * b[nn];
            c[j] += acc;
        }
    }
}

// C(k,n) += A^T * B with A (m,k), B (m,n): rank-1 updates in row order.
template <class T>
void gemm_at_acc(int k, int n, int m, const T* A, const T* B, T* C) {
    for (int r = 0; r < m; ++r) {
        const T* a = A + (size_t)r * k;
        const T* b = B + (size_t)r * n;
        for (int i = 0; i < k; ++i) {
            T av = a[i];
            T* c = C + (size_t)i * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace iag
