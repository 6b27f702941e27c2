#pragma once

#include <cstdint>
#include <vector>

#include "cadv/tape.hpp"

namespace cadv {

// Running second-moment estimate of the representation distribution.
// M and m are kept in double regardless of the run precision: the null-space
// construction below eats small eigenvalues and cannot afford f32 noise.
struct CovarianceEstimate {
  int64_t d = 0;
  std::vector<double> M;  // d x d, symmetric PSD
  std::vector<double> m;  // d
  double rho_ema = 0.99;
  double rho_shr = 0.1;

  static CovarianceEstimate identity(int64_t d, double rho_ema = 0.99, double rho_shr = 0.1);
};

// EMA update of (m, M) from a batch of representations (B x d, row-major),
// then shrinkage M <- (1 - rho_shr) M + rho_shr (tr M / d) I. Shrinkage
// preserves the trace and keeps M safely away from singular.
void update_covariance(CovarianceEstimate& est, const double* R, int64_t B, int64_t d);

template <class Real>
void update_covariance(CovarianceEstimate& est, const Tensor<Real>& R);

// Rows form an orthonormal basis of null(W_c M): right singular vectors of
// W_c M whose singular values fall below 1e-8 * sigma_max, ordered by
// ascending singular value, sign-fixed. Returns d_s x d row-major.
// Throws if d_s exceeds the null-space dimension.
std::vector<double> orthogonal_style_map(const std::vector<double>& Wc, int64_t k, int64_t d,
                                         const CovarianceEstimate& est, int64_t d_s);

// max |W_s M W_c^T| — the assertable orthogonality residual.
double style_orthogonality_residual(const std::vector<double>& Ws, int64_t d_s,
                                    const std::vector<double>& Wc, int64_t k, int64_t d,
                                    const CovarianceEstimate& est);

// Per-class values e^{w_i mu} / sum_j e^{w_j mu + (sigma^2/2) |w_j - w_i|^2},
// computed in log space. The raw values are per-class bound objects and need
// not sum to 1; normalized=true rescales them into a proper distribution for
// inspection only (losses always use the raw values).
std::vector<double> gaussian_softmax(const std::vector<double>& mu,
                                     const std::vector<double>& Wg, int64_t k, double sigma,
                                     bool normalized = false);

struct StyleDistribution {
  std::vector<double> mu;  // d_s
  double sigma = 0.0;
};

// -log of the label's gaussian_softmax value: closed-form upper bound on the
// expected CE over s ~ N(mu, sigma^2 I).
double style_ce_upper_bound(const StyleDistribution& dist, const std::vector<double>& Wg,
                            int64_t k, int64_t y);

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

// Monte-Carlo estimate of E CE(softmax(W_g s), y), s ~ N(mu, sigma^2 I).
// Oracle for the closed-form bound; deterministic given seed.
McEstimate mc_style_ce(const StyleDistribution& dist, const std::vector<double>& Wg,
                       int64_t k, int64_t y, int64_t n_samples, uint64_t seed);

// Batched, differentiable version of the bound as a fused tape op.
// mu: B x d_s, Wg: k x d_s, returns per-sample losses [B]. Gradients flow to
// both mu and Wg (analytic; cross-checked against finite differences).
template <class Real>
Tensor<Real> style_bound_ce(Tape<Real>& tape, Tensor<Real> mu, Tensor<Real> Wg,
                            const std::vector<int64_t>& y, Real sigma);

}  // namespace cadv
