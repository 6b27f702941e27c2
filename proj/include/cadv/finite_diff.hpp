#pragma once

#include "cadv/tensor.hpp"

namespace cadv {

// Central-difference gradient estimate: (f(x+h e_i) - f(x-h e_i)) / 2h per
// coordinate. f must be a deterministic scalar function of x's values; x is
// perturbed in place and restored. Independent oracle for backward().
template <class Real, class F>
Tensor<Real> finite_diff_grad(F&& f, Tensor<Real>& x, double h) {
  CADV_CHECK(h > 0, "finite_diff_grad: h must be > 0");
  Tensor<Real> g(x.shape());
  auto& xv = x.data();
  for (size_t i = 0; i < xv.size(); ++i) {
    const Real orig = xv[i];
    xv[i] = static_cast<Real>(orig + h);
    const double fp = f(x);
    xv[i] = static_cast<Real>(orig - h);
    const double fm = f(x);
    xv[i] = orig;
    g.data()[i] = static_cast<Real>((fp - fm) / (2.0 * h));
  }
  return g;
}

// max_i |a_i - b_i| / max(1, max_i |b_i|): relative error with an absolute
// floor so near-zero gradients do not explode the ratio.
template <class Real>
double max_rel_err(const Tensor<Real>& a, const Tensor<Real>& b) {
  CADV_CHECK(a.numel() == b.numel(), "max_rel_err: size mismatch");
  double num = 0, den = 1;
  for (int64_t i = 0; i < a.numel(); ++i) {
    num = std::max(num, std::abs(double(a.at(i)) - double(b.at(i))));
    den = std::max(den, std::abs(double(b.at(i))));
  }
  return num / den;
}

}  // namespace cadv
