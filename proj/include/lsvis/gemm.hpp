#pragma once

#include <cstdint>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace lsvis::nd {

// Row-major C[m,n] = alpha * op(A) * op(B) + beta * C.
// Training is single-threaded by contract, so BLAS is pinned to one thread;
// results are then bitwise reproducible.
inline void pin_blas_threads() {
    static bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}

inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
                 const float* b, float beta, float* c) {
    pin_blas_threads();
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
}

inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const double* a,
                 const double* b, double beta, double* c) {
    pin_blas_threads();
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
}

}  // namespace lsvis::nd
