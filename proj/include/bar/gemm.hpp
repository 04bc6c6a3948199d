#pragma once

#include <cstddef>

namespace bar {

/// Minimal row-major GEMM kernels sized for the convolutions in this project
/// (M, K up to a few hundred; N up to a few thousand). The j-innermost loops
/// auto-vectorize under -O3; no blocking is needed at these sizes because the
/// operands fit comfortably in L2.

/// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<std::size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) ci[j] = T(0);
        const T* ai = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T aip = ai[p];
            if (aip == T(0)) continue;
            const T* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

/// C[M,K] (+)= A[M,N] * B[K,N]^T   (dot products over the shared N axis)
///
/// The reduction runs over 16 independent lanes so the compiler can keep it
/// in vector registers without being asked to reassociate a serial sum.
template <class T>
void gemm_nt(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate) {
    constexpr int lanes = 16;
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<std::size_t>(i) * n;
        T* ci = c + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T* bp = b + static_cast<std::size_t>(p) * n;
            T part[lanes] = {};
            int j = 0;
            for (; j + lanes <= n; j += lanes)
                for (int l = 0; l < lanes; ++l) part[l] += ai[j + l] * bp[j + l];
            T acc = T(0);
            for (int l = 0; l < lanes; ++l) acc += part[l];
            for (; j < n; ++j) acc += ai[j] * bp[j];
            ci[p] = accumulate ? ci[p] + acc : acc;
        }
    }
}

/// C[K,N] (+)= A[M,K]^T * B[M,N]   (axpy rows of B scaled by columns of A)
template <class T>
void gemm_tn(int k, int n, int m, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate)
        for (std::size_t i = 0; i < static_cast<std::size_t>(k) * n; ++i) c[i] = T(0);
    for (int i = 0; i < m; ++i) {
        const T* bi = b + static_cast<std::size_t>(i) * n;
        const T* ai = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T w = ai[p];
            if (w == T(0)) continue;
            T* cp = c + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) cp[j] += w * bi[j];
        }
    }
}

}  // namespace bar
