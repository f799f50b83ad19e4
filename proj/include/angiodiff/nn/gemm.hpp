#pragma once

#include <cblas.h>

namespace angiodiff::nn {

// Row-major single-precision GEMM: C = alpha * op(A) op(B) + beta * C.
// OpenBLAS shards output tiles across threads, so results are bit-identical
// for a fixed thread count; the CLI pins the count at startup.
inline void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                  int lda, const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
                ldc);
}

inline void set_compute_threads(int n) {
    openblas_set_num_threads(n);
}

}  // namespace angiodiff::nn
