#include "cadv/linalg.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>

namespace cadv {

namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using CMap = Eigen::Map<const RowMat<Real>, 0, Eigen::OuterStride<>>;
template <class Real>
using MMap = Eigen::Map<RowMat<Real>, 0, Eigen::OuterStride<>>;

}  // namespace

template <class Real>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, Real alpha,
          const Real* a, int64_t lda, const Real* b, int64_t ldb, Real beta, Real* c,
          int64_t ldc) {
  CADV_CHECK(m >= 0 && n >= 0 && k >= 0, "gemm: negative dimension");
  using Idx = Eigen::Index;
  CMap<Real> A(a, trans_a ? Idx(k) : Idx(m), trans_a ? Idx(m) : Idx(k),
               Eigen::OuterStride<>(Idx(lda)));
  CMap<Real> B(b, trans_b ? Idx(n) : Idx(k), trans_b ? Idx(k) : Idx(n),
               Eigen::OuterStride<>(Idx(ldb)));
  MMap<Real> C(c, Idx(m), Idx(n), Eigen::OuterStride<>(Idx(ldc)));

  if (beta == Real(0))
    C.setZero();
  else if (beta != Real(1))
    C *= beta;

  if (!trans_a && !trans_b)
    C.noalias() += alpha * (A * B);
  else if (trans_a && !trans_b)
    C.noalias() += alpha * (A.transpose() * B);
  else if (!trans_a && trans_b)
    C.noalias() += alpha * (A * B.transpose());
  else
    C.noalias() += alpha * (A.transpose() * B.transpose());
}

template void gemm<float>(bool, bool, int64_t, int64_t, int64_t, float, const float*,
                          int64_t, const float*, int64_t, float, float*, int64_t);
template void gemm<double>(bool, bool, int64_t, int64_t, int64_t, double, const double*,
                           int64_t, const double*, int64_t, double, double*, int64_t);

template <class Real>
void gemm_nt_rowstable(int64_t m, int64_t n, int64_t k, const Real* a, int64_t lda,
                       const Real* b, int64_t ldb, Real* c, int64_t ldc) {
  // Dot-product kernel: c[i][j] = <a_i, b_j>. Eight independent lane
  // accumulators, combined in a fixed order, so the rounding of row i never
  // depends on m (the batch grouping).
  constexpr int64_t L = 8;
  for (int64_t i = 0; i < m; ++i) {
    const Real* ai = a + i * lda;
    Real* ci = c + i * ldc;
    for (int64_t j = 0; j < n; ++j) {
      const Real* bj = b + j * ldb;
      Real acc[L] = {};
      int64_t p = 0;
      for (; p + L <= k; p += L)
        for (int64_t l = 0; l < L; ++l) acc[l] += ai[p + l] * bj[p + l];
      for (; p < k; ++p) acc[p % L] += ai[p] * bj[p];
      Real s01 = acc[0] + acc[1], s23 = acc[2] + acc[3];
      Real s45 = acc[4] + acc[5], s67 = acc[6] + acc[7];
      ci[j] = (s01 + s23) + (s45 + s67);
    }
  }
}

template <class Real>
void gemm_nn_rowstable(int64_t m, int64_t n, int64_t k, const Real* a, int64_t lda,
                       const Real* b, int64_t ldb, Real* c, int64_t ldc) {
  // Saxpy kernel: c_i = sum_p a[i][p] * b_p. Accumulation order along p is
  // fixed per output element; the inner loop over j carries no reduction.
  for (int64_t i = 0; i < m; ++i) {
    Real* ci = c + i * ldc;
    for (int64_t j = 0; j < n; ++j) ci[j] = Real(0);
    const Real* ai = a + i * lda;
    for (int64_t p = 0; p < k; ++p) {
      const Real av = ai[p];
      const Real* bp = b + p * ldb;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template void gemm_nt_rowstable<float>(int64_t, int64_t, int64_t, const float*, int64_t,
                                       const float*, int64_t, float*, int64_t);
template void gemm_nt_rowstable<double>(int64_t, int64_t, int64_t, const double*, int64_t,
                                        const double*, int64_t, double*, int64_t);
template void gemm_nn_rowstable<float>(int64_t, int64_t, int64_t, const float*, int64_t,
                                       const float*, int64_t, float*, int64_t);
template void gemm_nn_rowstable<double>(int64_t, int64_t, int64_t, const double*, int64_t,
                                        const double*, int64_t, double*, int64_t);

void svd_full_v(const double* a, int64_t k, int64_t d, double* sv, double* v) {
  using Idx = Eigen::Index;
  Eigen::MatrixXd A = Eigen::Map<const RowMat<double>>(a, Idx(k), Idx(d));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const int64_t r = std::min(k, d);
  for (int64_t i = 0; i < r; ++i) sv[i] = svd.singularValues()(Idx(i));
  Eigen::Map<RowMat<double>>(v, Idx(d), Idx(d)) = svd.matrixV();
}

void sym_eig(const double* a, int64_t d, double* eigenvalues, double* eigenvectors) {
  using Idx = Eigen::Index;
  Eigen::MatrixXd A = Eigen::Map<const RowMat<double>>(a, Idx(d), Idx(d));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  CADV_CHECK(es.info() == Eigen::Success, "sym_eig: eigensolver failed");
  for (int64_t i = 0; i < d; ++i) {
    eigenvalues[i] = es.eigenvalues()(Idx(i));
    // eigenvectors() columns are the vectors; copy column i as row i, sign-fixed
    double sign = 0.0;
    for (int64_t j = 0; j < d && sign == 0.0; ++j) {
      double v = es.eigenvectors()(Idx(j), Idx(i));
      if (std::abs(v) > 1e-12) sign = v > 0 ? 1.0 : -1.0;
    }
    if (sign == 0.0) sign = 1.0;
    for (int64_t j = 0; j < d; ++j)
      eigenvectors[i * d + j] = sign * es.eigenvectors()(Idx(j), Idx(i));
  }
}

}  // namespace cadv
