#pragma once

#include <cstdint>

#include "cadv/common.hpp"

namespace cadv {

// C = alpha * op(A) * op(B) + beta * C over row-major dense buffers.
// op(A) is m x k, op(B) is k x n, C is m x n. Leading dimensions are the
// row strides of the stored (untransposed) matrices.
template <class Real>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, Real alpha,
          const Real* a, int64_t lda, const Real* b, int64_t ldb, Real beta, Real* c,
          int64_t ldc);

// Row-stable product kernels: every output row is accumulated in a fixed
// order that depends only on k, never on how rows are grouped into the call.
// This is what makes forward() bitwise identical for a sample regardless of
// the batch it sits in. C = A B^T (A: m x k, B: n x k) and C = A B.
template <class Real>
void gemm_nt_rowstable(int64_t m, int64_t n, int64_t k, const Real* a, int64_t lda,
                       const Real* b, int64_t ldb, Real* c, int64_t ldc);
template <class Real>
void gemm_nn_rowstable(int64_t m, int64_t n, int64_t k, const Real* a, int64_t lda,
                       const Real* b, int64_t ldb, Real* c, int64_t ldc);

// Singular value decomposition of a k x d row-major matrix (k <= d):
// fills sv (min(k,d), descending) and V (d x d row-major, right singular
// vectors as columns). Deterministic.
void svd_full_v(const double* a, int64_t k, int64_t d, double* sv, double* v);

// Symmetric eigendecomposition of a d x d row-major matrix, always in double.
// Eigenvalues ascending; eigenvectors[i*d..] is the row vector for value i,
// sign-fixed so the first entry with |v| > 1e-12 is positive.
void sym_eig(const double* a, int64_t d, double* eigenvalues, double* eigenvectors);

}  // namespace cadv
