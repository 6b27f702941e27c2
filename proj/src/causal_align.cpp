#include "cadv/causal_align.hpp"

#include <algorithm>
#include <cmath>

#include "cadv/linalg.hpp"
#include "cadv/rng.hpp"

namespace cadv {

CovarianceEstimate CovarianceEstimate::identity(int64_t d, double rho_ema, double rho_shr) {
  CADV_CHECK(d >= 1, "covariance: d must be >= 1");
  CADV_CHECK(rho_ema >= 0 && rho_ema < 1, "covariance: rho_ema must be in [0,1)");
  CADV_CHECK(rho_shr >= 0 && rho_shr <= 1, "covariance: rho_shr must be in [0,1]");
  CovarianceEstimate est;
  est.d = d;
  est.M.assign(static_cast<size_t>(d * d), 0.0);
  for (int64_t i = 0; i < d; ++i) est.M[i * d + i] = 1.0;
  est.m.assign(static_cast<size_t>(d), 0.0);
  est.rho_ema = rho_ema;
  est.rho_shr = rho_shr;
  return est;
}

void update_covariance(CovarianceEstimate& est, const double* R, int64_t B, int64_t d) {
  CADV_CHECK(d == est.d, "update_covariance: dimension ", d, " vs estimate ", est.d);
  CADV_CHECK(B >= 2, "update_covariance: batch size must be >= 2, got ", B);

  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t j = 0; j < d; ++j) mean[j] += R[b * d + j];
  for (auto& v : mean) v /= double(B);

  std::vector<double> X(static_cast<size_t>(B * d));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t j = 0; j < d; ++j) X[b * d + j] = R[b * d + j] - mean[j];

  std::vector<double> S(static_cast<size_t>(d * d));
  gemm<double>(true, false, d, d, B, 1.0 / double(B), X.data(), d, X.data(), d, 0.0, S.data(),
               d);

  const double a = est.rho_ema, na = 1.0 - est.rho_ema;
  for (int64_t j = 0; j < d; ++j) est.m[j] = a * est.m[j] + na * mean[j];
  double trace = 0.0;
  for (int64_t i = 0; i < d * d; ++i) est.M[i] = a * est.M[i] + na * S[i];
  for (int64_t i = 0; i < d; ++i) trace += est.M[i * d + i];

  const double shr = est.rho_shr, iso = shr * trace / double(d);
  for (int64_t i = 0; i < d * d; ++i) est.M[i] *= 1.0 - shr;
  for (int64_t i = 0; i < d; ++i) est.M[i * d + i] += iso;
}

template <class Real>
void update_covariance(CovarianceEstimate& est, const Tensor<Real>& R) {
  CADV_CHECK(R.ndim() == 2, "update_covariance: R must be B x d, got ", shape_str(R.shape()));
  const int64_t B = R.dim(0), d = R.dim(1);
  if constexpr (std::is_same_v<Real, double>) {
    update_covariance(est, R.ptr(), B, d);
  } else {
    std::vector<double> tmp(static_cast<size_t>(B * d));
    for (int64_t i = 0; i < B * d; ++i) tmp[i] = double(R.at(i));
    update_covariance(est, tmp.data(), B, d);
  }
}

template void update_covariance<float>(CovarianceEstimate&, const Tensor<float>&);
template void update_covariance<double>(CovarianceEstimate&, const Tensor<double>&);

std::vector<double> orthogonal_style_map(const std::vector<double>& Wc, int64_t k, int64_t d,
                                         const CovarianceEstimate& est, int64_t d_s) {
  CADV_CHECK(static_cast<int64_t>(Wc.size()) == k * d, "orthogonal_style_map: Wc size");
  CADV_CHECK(est.d == d, "orthogonal_style_map: covariance dim ", est.d, " vs ", d);
  CADV_CHECK(k < d, "orthogonal_style_map: need k < d, got k=", k, " d=", d);
  CADV_CHECK(d_s >= 1, "orthogonal_style_map: d_s must be >= 1");

  // A = Wc M (k x d); null(A) from the right singular vectors of A whose
  // singular values fall below 1e-8 * sigma_max. Columns of V beyond
  // min(k, d) carry an implicit singular value of exactly zero.
  std::vector<double> A(static_cast<size_t>(k * d));
  gemm<double>(false, false, k, d, d, 1.0, Wc.data(), d, est.M.data(), d, 0.0, A.data(), d);

  const int64_t r = std::min(k, d);
  std::vector<double> sv(static_cast<size_t>(r), 0.0);
  std::vector<double> V(static_cast<size_t>(d * d));  // column i = right singular vector i
  svd_full_v(A.data(), k, d, sv.data(), V.data());

  const double smax = sv.empty() ? 0.0 : sv[0];
  const double cut = 1e-8 * smax;
  std::vector<std::pair<double, int64_t>> null_cols;  // (singular value, column)
  for (int64_t i = 0; i < d; ++i) {
    const double s = i < r ? sv[static_cast<size_t>(i)] : 0.0;
    if (s < cut || smax == 0.0) null_cols.emplace_back(s, i);
  }
  std::stable_sort(null_cols.begin(), null_cols.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  CADV_CHECK(d_s <= static_cast<int64_t>(null_cols.size()),
             "orthogonal_style_map: d_s=", d_s, " exceeds null-space dim ", null_cols.size(),
             " (rank ", d - static_cast<int64_t>(null_cols.size()), ")");

  std::vector<double> Ws(static_cast<size_t>(d_s * d));
  for (int64_t i = 0; i < d_s; ++i) {
    const int64_t col = null_cols[static_cast<size_t>(i)].second;
    double sign = 0.0;
    for (int64_t j = 0; j < d && sign == 0.0; ++j) {
      const double v = V[j * d + col];
      if (std::abs(v) > 1e-12) sign = v > 0 ? 1.0 : -1.0;
    }
    if (sign == 0.0) sign = 1.0;
    for (int64_t j = 0; j < d; ++j) Ws[i * d + j] = sign * V[j * d + col];
  }
  return Ws;
}

double style_orthogonality_residual(const std::vector<double>& Ws, int64_t d_s,
                                    const std::vector<double>& Wc, int64_t k, int64_t d,
                                    const CovarianceEstimate& est) {
  std::vector<double> WsM(static_cast<size_t>(d_s * d));
  gemm<double>(false, false, d_s, d, d, 1.0, Ws.data(), d, est.M.data(), d, 0.0, WsM.data(), d);
  std::vector<double> P(static_cast<size_t>(d_s * k));
  gemm<double>(false, true, d_s, k, d, 1.0, WsM.data(), d, Wc.data(), d, 0.0, P.data(), k);
  double r = 0.0;
  for (double v : P) r = std::max(r, std::abs(v));
  return r;
}

namespace {

// log-space pairwise exponents for one (mu, y): a_j = (w_j - w_y)^T mu +
// (sigma^2/2) |w_j - w_y|^2, with a_y = 0. Loss is logsumexp_j a_j.
double pairwise_lse(const double* mu, const double* Wg, int64_t k, int64_t ds, double sigma,
                    int64_t y, std::vector<double>* p_out) {
  std::vector<double> a(static_cast<size_t>(k));
  const double* wy = Wg + y * ds;
  for (int64_t j = 0; j < k; ++j) {
    const double* wj = Wg + j * ds;
    double dot = 0, nn = 0;
    for (int64_t t = 0; t < ds; ++t) {
      const double dw = wj[t] - wy[t];
      dot += dw * mu[t];
      nn += dw * dw;
    }
    a[static_cast<size_t>(j)] = dot + 0.5 * sigma * sigma * nn;
  }
  double mx = a[0];
  for (double v : a) mx = std::max(mx, v);
  double s = 0;
  for (double v : a) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  if (p_out) {
    p_out->resize(static_cast<size_t>(k));
    for (int64_t j = 0; j < k; ++j) (*p_out)[j] = std::exp(a[static_cast<size_t>(j)] - lse);
  }
  return lse;
}

}  // namespace

std::vector<double> gaussian_softmax(const std::vector<double>& mu,
                                     const std::vector<double>& Wg, int64_t k, double sigma,
                                     bool normalized) {
  CADV_CHECK(sigma >= 0, "gaussian_softmax: sigma must be >= 0, got ", sigma);
  CADV_CHECK(k >= 2, "gaussian_softmax: need k >= 2");
  const int64_t ds = static_cast<int64_t>(mu.size());
  CADV_CHECK(static_cast<int64_t>(Wg.size()) == k * ds, "gaussian_softmax: Wg size ",
             Wg.size(), " vs k*d_s=", k * ds);
  std::vector<double> p(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i)
    p[static_cast<size_t>(i)] = std::exp(-pairwise_lse(mu.data(), Wg.data(), k, ds, sigma, i,
                                                       nullptr));
  if (normalized) {
    double s = 0;
    for (double v : p) s += v;
    CADV_CHECK(s > 0, "gaussian_softmax: degenerate normalization");
    for (auto& v : p) v /= s;
  }
  return p;
}

double style_ce_upper_bound(const StyleDistribution& dist, const std::vector<double>& Wg,
                            int64_t k, int64_t y) {
  CADV_CHECK(y >= 0 && y < k, "style_ce_upper_bound: label ", y, " out of range [0,", k, ")");
  CADV_CHECK(dist.sigma >= 0, "style_ce_upper_bound: sigma must be >= 0");
  const int64_t ds = static_cast<int64_t>(dist.mu.size());
  CADV_CHECK(static_cast<int64_t>(Wg.size()) == k * ds, "style_ce_upper_bound: Wg size");
  return pairwise_lse(dist.mu.data(), Wg.data(), k, ds, dist.sigma, y, nullptr);
}

McEstimate mc_style_ce(const StyleDistribution& dist, const std::vector<double>& Wg,
                       int64_t k, int64_t y, int64_t n_samples, uint64_t seed) {
  CADV_CHECK(n_samples >= 2, "mc_style_ce: need n_samples >= 2");
  CADV_CHECK(y >= 0 && y < k, "mc_style_ce: label out of range");
  const int64_t ds = static_cast<int64_t>(dist.mu.size());
  Rng rng(seed);
  std::vector<double> s(static_cast<size_t>(ds)), z(static_cast<size_t>(k));
  // Welford: exact zero variance when every draw lands on the same value
  // (sigma = 0), unlike the sum-of-squares form.
  double mean = 0, m2 = 0;
  for (int64_t it = 0; it < n_samples; ++it) {
    for (int64_t t = 0; t < ds; ++t) s[t] = dist.mu[t] + dist.sigma * rng.normal();
    for (int64_t j = 0; j < k; ++j) {
      double dot = 0;
      for (int64_t t = 0; t < ds; ++t) dot += Wg[j * ds + t] * s[t];
      z[static_cast<size_t>(j)] = dot;
    }
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double se = 0;
    for (double v : z) se += std::exp(v - mx);
    const double ce = mx + std::log(se) - z[static_cast<size_t>(y)];
    const double d1 = ce - mean;
    mean += d1 / double(it + 1);
    m2 += d1 * (ce - mean);
  }
  McEstimate out;
  out.mean = mean;
  out.stderr_ = std::sqrt(std::max(0.0, m2 / double(n_samples)) / double(n_samples));
  return out;
}

template <class Real>
Tensor<Real> style_bound_ce(Tape<Real>& tape, Tensor<Real> mu, Tensor<Real> Wg,
                            const std::vector<int64_t>& y, Real sigma) {
  CADV_CHECK(mu.ndim() == 2 && Wg.ndim() == 2, "style_bound_ce: mu B x d_s, Wg k x d_s");
  CADV_CHECK(sigma >= Real(0), "style_bound_ce: sigma must be >= 0");
  const int64_t B = mu.dim(0), ds = mu.dim(1), k = Wg.dim(0);
  CADV_CHECK(Wg.dim(1) == ds, "style_bound_ce: d_s mismatch ", Wg.dim(1), " vs ", ds);
  CADV_CHECK(static_cast<int64_t>(y.size()) == B, "style_bound_ce: label count");

  std::vector<Real> v(static_cast<size_t>(B));
  std::vector<double> mud(static_cast<size_t>(ds)), wgd(Wg.data().begin(), Wg.data().end());
  for (int64_t b = 0; b < B; ++b) {
    CADV_CHECK(y[b] >= 0 && y[b] < k, "style_bound_ce: label ", y[b], " out of range");
    for (int64_t t = 0; t < ds; ++t) mud[t] = double(mu.at(b * ds + t));
    v[static_cast<size_t>(b)] =
        static_cast<Real>(pairwise_lse(mud.data(), wgd.data(), k, ds, double(sigma), y[b],
                                       nullptr));
  }
  Tensor<Real> out = Tensor<Real>::from({B}, std::move(v));

  const bool nmu = tape.needs_grad(mu), nwg = tape.needs_grad(Wg);
  auto yy = std::make_shared<std::vector<int64_t>>(y);
  auto back = [mu, Wg, out, yy, sigma, B, ds, k, nmu, nwg]() mutable {
    const auto& g = out.grad();
    std::vector<double> mud(static_cast<size_t>(ds));
    std::vector<double> wgd(Wg.data().begin(), Wg.data().end());
    std::vector<double> p;
    const double s2 = double(sigma) * double(sigma);
    for (int64_t b = 0; b < B; ++b) {
      const double gb = double(g[b]);
      if (gb == 0.0) continue;
      const int64_t yb = (*yy)[b];
      for (int64_t t = 0; t < ds; ++t) mud[t] = double(mu.at(b * ds + t));
      pairwise_lse(mud.data(), wgd.data(), k, ds, double(sigma), yb, &p);
      const double* wy = wgd.data() + yb * ds;
      if (nmu) {
        auto& gmu = mu.grad();
        for (int64_t t = 0; t < ds; ++t) {
          double acc = 0;
          for (int64_t j = 0; j < k; ++j) acc += p[static_cast<size_t>(j)] * wgd[j * ds + t];
          gmu[b * ds + t] += static_cast<Real>(gb * (acc - wy[t]));
        }
      }
      if (nwg) {
        auto& gw = Wg.grad();
        for (int64_t j = 0; j < k; ++j) {
          if (j == yb) continue;  // the a_y = 0 term carries no dependence
          const double pj = p[static_cast<size_t>(j)];
          const double* wj = wgd.data() + j * ds;
          for (int64_t t = 0; t < ds; ++t) {
            const double dj = mud[t] + s2 * (wj[t] - wy[t]);
            gw[j * ds + t] += static_cast<Real>(gb * pj * dj);
            gw[yb * ds + t] -= static_cast<Real>(gb * pj * dj);
          }
        }
      }
    }
  };
  return tape.custom("style_bound_ce", {mu, Wg}, out, std::move(back));
}

template Tensor<float> style_bound_ce<float>(Tape<float>&, Tensor<float>, Tensor<float>,
                                             const std::vector<int64_t>&, float);
template Tensor<double> style_bound_ce<double>(Tape<double>&, Tensor<double>, Tensor<double>,
                                               const std::vector<int64_t>&, double);

}  // namespace cadv
