#include "cadv/tape.hpp"

#include <cmath>
#include <cstring>

#include "cadv/linalg.hpp"

namespace cadv {

namespace {

template <class Real>
void throw_if_nonfinite(const Tensor<Real>& t, const char* kind) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite output in op '") + kind + "'");
}

}  // namespace

template <class Real>
void Tape<Real>::watch(const Tensor<Real>& t) {
  CADV_CHECK(t.defined(), "watch: undefined tensor");
  CADV_CHECK(t.requires_grad(), "watch: tensor must have requires_grad set");
  needs_[t.raw()] = true;
}

template <class Real>
bool Tape<Real>::needs_grad(const Tensor<Real>& t) const {
  if (!t.defined()) return false;
  auto it = needs_.find(t.raw());
  if (it != needs_.end()) return it->second;
  return scope_ == GradScope::all && t.requires_grad();
}

template <class Real>
Tensor<Real> Tape<Real>::make_out(Shape shape, std::vector<Real> values, const char* kind) {
  Tensor<Real> out = Tensor<Real>::from(std::move(shape), std::move(values));
  throw_if_nonfinite(out, kind);
  return out;
}

template <class Real>
void Tape<Real>::push(const char* kind, std::vector<Tensor<Real>> inputs,
                      const Tensor<Real>& out, std::function<void()> back) {
  bool ng = false;
  for (const auto& in : inputs) ng = ng || needs_grad(in);
  needs_[out.raw()] = ng;
  produced_[out.raw()] = true;
  Tensor<Real> o = out;
  if (ng) {
    o.set_requires_grad(true);
    o.grad();  // allocate zero-filled so closures can read it unconditionally
  }
  nodes_.push_back(Node{kind, std::move(inputs), o, std::move(back)});
}

// ---- elementwise ----------------------------------------------------------

template <class Real>
Tensor<Real> Tape<Real>::add(Tensor<Real> a, Tensor<Real> b) {
  const bool rowcast = a.shape() != b.shape();
  if (rowcast) {
    CADV_CHECK(b.ndim() == 1 && a.ndim() >= 1 && a.dim(a.ndim() - 1) == b.dim(0),
               "add: shapes ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
  }
  const int64_t n = a.numel(), c = b.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[i] = a.at(i) + b.at(rowcast ? i % c : i);
  Tensor<Real> out = make_out(a.shape(), std::move(v), "add");
  bool na = needs_grad(a), nb = needs_grad(b);
  push("add", {a, b}, out, [a, b, out, na, nb, rowcast, n, c]() mutable {
    const auto& g = out.grad();
    if (na) {
      auto& ga = a.grad();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (nb) {
      auto& gb = b.grad();
      if (rowcast)
        for (int64_t i = 0; i < n; ++i) gb[i % c] += g[i];
      else
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
    }
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::sub(Tensor<Real> a, Tensor<Real> b) {
  CADV_CHECK(a.shape() == b.shape(), "sub: shapes ", shape_str(a.shape()), " vs ",
             shape_str(b.shape()));
  const int64_t n = a.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[i] = a.at(i) - b.at(i);
  Tensor<Real> out = make_out(a.shape(), std::move(v), "sub");
  bool na = needs_grad(a), nb = needs_grad(b);
  push("sub", {a, b}, out, [a, b, out, na, nb, n]() mutable {
    const auto& g = out.grad();
    if (na) {
      auto& ga = a.grad();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (nb) {
      auto& gb = b.grad();
      for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
    }
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::mul(Tensor<Real> a, Tensor<Real> b) {
  CADV_CHECK(a.shape() == b.shape(), "mul: shapes ", shape_str(a.shape()), " vs ",
             shape_str(b.shape()));
  const int64_t n = a.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[i] = a.at(i) * b.at(i);
  Tensor<Real> out = make_out(a.shape(), std::move(v), "mul");
  bool na = needs_grad(a), nb = needs_grad(b);
  push("mul", {a, b}, out, [a, b, out, na, nb, n]() mutable {
    const auto& g = out.grad();
    if (na) {
      auto& ga = a.grad();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * b.at(i);
    }
    if (nb) {
      auto& gb = b.grad();
      for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * a.at(i);
    }
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::scalar_mul(Tensor<Real> a, Real k) {
  const int64_t n = a.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[i] = k * a.at(i);
  Tensor<Real> out = make_out(a.shape(), std::move(v), "scalar_mul");
  bool na = needs_grad(a);
  push("scalar_mul", {a}, out, [a, out, na, k, n]() mutable {
    if (!na) return;
    const auto& g = out.grad();
    auto& ga = a.grad();
    for (int64_t i = 0; i < n; ++i) ga[i] += k * g[i];
  });
  return out;
}

// ---- matmul ----------------------------------------------------------------

template <class Real>
Tensor<Real> Tape<Real>::matmul(Tensor<Real> a, Tensor<Real> b, bool trans_a,
                                bool trans_b) {
  CADV_CHECK(a.ndim() == 2 && b.ndim() == 2, "matmul: need rank-2 tensors, got ",
             shape_str(a.shape()), " x ", shape_str(b.shape()));
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t ka = trans_a ? a.dim(0) : a.dim(1);
  const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  CADV_CHECK(ka == kb, "matmul: inner dims ", ka, " vs ", kb);
  const int64_t lda = a.dim(1), ldb = b.dim(1);

  std::vector<Real> v(static_cast<size_t>(m * n));
  // Untransposed-A products go through row-stable kernels so an output row
  // is a function of its own input row only, down to the last bit; rows of a
  // batch then match the same sample run alone. Transposed-A products mix
  // rows by construction, so plain gemm is fine there.
  if (!trans_a && trans_b)
    gemm_nt_rowstable<Real>(m, n, ka, a.ptr(), lda, b.ptr(), ldb, v.data(), n);
  else if (!trans_a && !trans_b)
    gemm_nn_rowstable<Real>(m, n, ka, a.ptr(), lda, b.ptr(), ldb, v.data(), n);
  else
    gemm<Real>(trans_a, trans_b, m, n, ka, Real(1), a.ptr(), lda, b.ptr(), ldb, Real(0),
               v.data(), n);
  Tensor<Real> out = make_out({m, n}, std::move(v), "matmul");
  bool na = needs_grad(a), nb = needs_grad(b);
  push("matmul", {a, b}, out,
       [a, b, out, na, nb, trans_a, trans_b, m, n, ka, lda, ldb]() mutable {
         const Real* g = out.grad().data();
         const int64_t k = ka;
         if (na) {
           Real* ga = a.grad().data();
           if (!trans_a && !trans_b)  // gA += g Bt
             gemm<Real>(false, true, m, k, n, Real(1), g, n, b.ptr(), ldb, Real(1), ga, lda);
           else if (!trans_a && trans_b)  // gA += g B
             gemm<Real>(false, false, m, k, n, Real(1), g, n, b.ptr(), ldb, Real(1), ga, lda);
           else if (trans_a && !trans_b)  // gA += B gT  (A stored k x m)
             gemm<Real>(false, true, k, m, n, Real(1), b.ptr(), ldb, g, n, Real(1), ga, lda);
           else  // gA += Bt gT
             gemm<Real>(true, true, k, m, n, Real(1), b.ptr(), ldb, g, n, Real(1), ga, lda);
         }
         if (nb) {
           Real* gb = b.grad().data();
           if (!trans_a && !trans_b)  // gB += At g
             gemm<Real>(true, false, k, n, m, Real(1), a.ptr(), lda, g, n, Real(1), gb, ldb);
           else if (!trans_a && trans_b)  // gB += gT A  (B stored n x k)
             gemm<Real>(true, false, n, k, m, Real(1), g, n, a.ptr(), lda, Real(1), gb, ldb);
           else if (trans_a && !trans_b)  // gB += A g
             gemm<Real>(false, false, k, n, m, Real(1), a.ptr(), lda, g, n, Real(1), gb, ldb);
           else  // gB += gT At
             gemm<Real>(true, true, n, k, m, Real(1), g, n, a.ptr(), lda, Real(1), gb, ldb);
         }
       });
  return out;
}

// ---- conv2d ----------------------------------------------------------------

namespace {

// Scatter col (K x OHOW) layout for a single sample; forward gathers, backward
// scatter-adds. K = Cin*kh*kw rows ordered (ci, ki, kj).
template <class Real>
void im2col(const Real* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t pad, int64_t oh, int64_t ow, Real* col) {
  for (int64_t ci = 0; ci < cin; ++ci)
    for (int64_t ki = 0; ki < kh; ++ki)
      for (int64_t kj = 0; kj < kw; ++kj) {
        Real* row = col + ((ci * kh + ki) * kw + kj) * oh * ow;
        const Real* src = x + ci * h * w;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy + ki - pad;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox + kj - pad;
            row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? src[iy * w + ix]
                                    : Real(0);
          }
        }
      }
}

template <class Real>
void col2im_add(const Real* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t pad, int64_t oh, int64_t ow, Real* gx) {
  for (int64_t ci = 0; ci < cin; ++ci)
    for (int64_t ki = 0; ki < kh; ++ki)
      for (int64_t kj = 0; kj < kw; ++kj) {
        const Real* row = col + ((ci * kh + ki) * kw + kj) * oh * ow;
        Real* dst = gx + ci * h * w;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy + ki - pad;
          if (iy < 0 || iy >= h) continue;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox + kj - pad;
            if (ix >= 0 && ix < w) dst[iy * w + ix] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace

template <class Real>
Tensor<Real> Tape<Real>::conv2d(Tensor<Real> x, Tensor<Real> w,
                                Tensor<Real> bias, int pad) {
  CADV_CHECK(x.ndim() == 4, "conv2d: input must be B x C x H x W, got ", shape_str(x.shape()));
  CADV_CHECK(w.ndim() == 4, "conv2d: weight must be Cout x Cin x kh x kw, got ",
             shape_str(w.shape()));
  CADV_CHECK(pad >= 0, "conv2d: pad must be >= 0");
  const int64_t B = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  CADV_CHECK(w.dim(1) == cin, "conv2d: channel mismatch ", w.dim(1), " vs ", cin);
  const int64_t oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;
  CADV_CHECK(oh >= 1 && ow >= 1, "conv2d: kernel ", kh, "x", kw, " too large for ", h, "x", wd,
             " with pad ", pad);
  const bool has_bias = bias.defined();
  if (has_bias)
    CADV_CHECK(bias.numel() == cout, "conv2d: bias size ", bias.numel(), " vs ", cout);

  const int64_t K = cin * kh * kw, P = oh * ow;
  std::vector<Real> v(static_cast<size_t>(B * cout * P));
  std::vector<Real> col(static_cast<size_t>(K * P));
  for (int64_t b = 0; b < B; ++b) {
    im2col(x.ptr() + b * cin * h * wd, cin, h, wd, kh, kw, pad, oh, ow, col.data());
    Real* o = v.data() + b * cout * P;
    gemm<Real>(false, false, cout, P, K, Real(1), w.ptr(), K, col.data(), P, Real(0), o, P);
    if (has_bias)
      for (int64_t c = 0; c < cout; ++c)
        for (int64_t p = 0; p < P; ++p) o[c * P + p] += bias.at(c);
  }
  Tensor<Real> out = make_out({B, cout, oh, ow}, std::move(v), "conv2d");

  bool nx = needs_grad(x), nw = needs_grad(w), nb = has_bias && needs_grad(bias);
  std::vector<Tensor<Real>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  push("conv2d", std::move(inputs), out,
       [x, w, bias, out, nx, nw, nb, pad, B, cin, h, wd, cout, kh, kw, oh, ow, K, P]() mutable {
         if (!nx && !nw && !nb) return;
         const Real* g = out.grad().data();
         std::vector<Real> col(static_cast<size_t>(K * P));
         std::vector<Real> gcol(nx ? static_cast<size_t>(K * P) : 0);
         for (int64_t b = 0; b < B; ++b) {
           const Real* gs = g + b * cout * P;
           if (nw || nx)
             im2col(x.ptr() + b * cin * h * wd, cin, h, wd, kh, kw, pad, oh, ow, col.data());
           if (nw)  // gW += gs colT, accumulated in sample order
             gemm<Real>(false, true, cout, K, P, Real(1), gs, P, col.data(), P, Real(1),
                        w.grad().data(), K);
           if (nx) {
             gemm<Real>(true, false, K, P, cout, Real(1), w.ptr(), K, gs, P, Real(0),
                        gcol.data(), P);
             col2im_add(gcol.data(), cin, h, wd, kh, kw, pad, oh, ow,
                        x.grad().data() + b * cin * h * wd);
           }
           if (nb) {
             auto& gb = bias.grad();
             for (int64_t c = 0; c < cout; ++c) {
               Real s = 0;
               for (int64_t p = 0; p < P; ++p) s += gs[c * P + p];
               gb[c] += s;
             }
           }
         }
       });
  return out;
}

// ---- shape & pooling --------------------------------------------------------

template <class Real>
Tensor<Real> Tape<Real>::maxpool2x2(Tensor<Real> x) {
  CADV_CHECK(x.ndim() == 4, "maxpool2x2: input must be B x C x H x W");
  const int64_t B = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  CADV_CHECK(h % 2 == 0 && w % 2 == 0, "maxpool2x2: H, W must be even, got ", h, "x", w);
  const int64_t oh = h / 2, ow = w / 2;
  std::vector<Real> v(static_cast<size_t>(B * C * oh * ow));
  auto arg = std::make_shared<std::vector<int64_t>>(v.size());
  const Real* xd = x.ptr();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const Real* plane = xd + bc * h * w;
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        int64_t best = (2 * oy) * w + 2 * ox;
        // scan order fixes tie-breaking: first max wins
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx) {
            int64_t i = (2 * oy + dy) * w + 2 * ox + dx;
            if (plane[i] > plane[best]) best = i;
          }
        int64_t o = bc * oh * ow + oy * ow + ox;
        v[o] = plane[best];
        (*arg)[o] = bc * h * w + best;
      }
  }
  Tensor<Real> out = make_out({B, C, oh, ow}, std::move(v), "maxpool2x2");
  bool nx = needs_grad(x);
  push("maxpool2x2", {x}, out, [x, out, arg, nx]() mutable {
    if (!nx) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::relu(Tensor<Real> x) {
  const int64_t n = x.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[i] = x.at(i) > Real(0) ? x.at(i) : Real(0);
  Tensor<Real> out = make_out(x.shape(), std::move(v), "relu");
  bool nx = needs_grad(x);
  push("relu", {x}, out, [x, out, nx, n]() mutable {
    if (!nx) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (int64_t i = 0; i < n; ++i)
      if (x.at(i) > Real(0)) gx[i] += g[i];
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::reshape(Tensor<Real> x, Shape shape) {
  CADV_CHECK(cadv::numel(shape) == x.numel(), "reshape: ", shape_str(x.shape()), " to ",
             shape_str(shape));
  Tensor<Real> out = make_out(std::move(shape), x.data(), "reshape");
  bool nx = needs_grad(x);
  push("reshape", {x}, out, [x, out, nx]() mutable {
    if (!nx) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::flatten(Tensor<Real> x) {
  CADV_CHECK(x.ndim() >= 1, "flatten: rank-0 input");
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

// ---- row-wise / reductions ---------------------------------------------------

template <class Real>
Tensor<Real> Tape<Real>::log_softmax(Tensor<Real> x) {
  CADV_CHECK(x.ndim() == 2, "log_softmax: input must be B x k, got ", shape_str(x.shape()));
  const int64_t B = x.dim(0), k = x.dim(1);
  std::vector<Real> v(static_cast<size_t>(B * k));
  for (int64_t r = 0; r < B; ++r) {
    const Real* row = x.ptr() + r * k;
    Real m = row[0];
    for (int64_t c = 1; c < k; ++c) m = std::max(m, row[c]);
    Real s = 0;
    for (int64_t c = 0; c < k; ++c) s += std::exp(row[c] - m);
    const Real lse = m + std::log(s);
    for (int64_t c = 0; c < k; ++c) v[r * k + c] = row[c] - lse;
  }
  Tensor<Real> out = make_out(x.shape(), std::move(v), "log_softmax");
  bool nx = needs_grad(x);
  push("log_softmax", {x}, out, [x, out, nx, B, k]() mutable {
    if (!nx) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (int64_t r = 0; r < B; ++r) {
      Real s = 0;
      for (int64_t c = 0; c < k; ++c) s += g[r * k + c];
      for (int64_t c = 0; c < k; ++c)
        gx[r * k + c] += g[r * k + c] - std::exp(out.at(r * k + c)) * s;
    }
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::gather(Tensor<Real> x, const std::vector<int64_t>& idx) {
  CADV_CHECK(x.ndim() == 2, "gather: input must be B x k");
  const int64_t B = x.dim(0), k = x.dim(1);
  CADV_CHECK(static_cast<int64_t>(idx.size()) == B, "gather: ", idx.size(), " indices for ",
             B, " rows");
  std::vector<Real> v(static_cast<size_t>(B));
  for (int64_t r = 0; r < B; ++r) {
    CADV_CHECK(idx[r] >= 0 && idx[r] < k, "gather: index ", idx[r], " out of range [0,", k,
               ")");
    v[r] = x.at(r * k + idx[r]);
  }
  Tensor<Real> out = make_out({B}, std::move(v), "gather");
  bool nx = needs_grad(x);
  auto ix = std::make_shared<std::vector<int64_t>>(idx);
  push("gather", {x}, out, [x, out, ix, nx, B, k]() mutable {
    if (!nx) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (int64_t r = 0; r < B; ++r) gx[r * k + (*ix)[r]] += g[r];
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::sum(Tensor<Real> x) {
  Real s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.at(i);
  Tensor<Real> out = make_out({}, {s}, "sum");
  bool nx = needs_grad(x);
  push("sum", {x}, out, [x, out, nx]() mutable {
    if (!nx) return;
    const Real g = out.grad()[0];
    auto& gx = x.grad();
    for (auto& v : gx) v += g;
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::mean(Tensor<Real> x) {
  CADV_CHECK(x.numel() > 0, "mean: empty tensor");
  Real s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.at(i);
  const Real inv = Real(1) / Real(x.numel());
  Tensor<Real> out = make_out({}, {s * inv}, "mean");
  bool nx = needs_grad(x);
  push("mean", {x}, out, [x, out, nx, inv]() mutable {
    if (!nx) return;
    const Real g = out.grad()[0] * inv;
    auto& gx = x.grad();
    for (auto& v : gx) v += g;
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::exp(Tensor<Real> x) {
  const int64_t n = x.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[i] = std::exp(x.at(i));
  Tensor<Real> out = make_out(x.shape(), std::move(v), "exp");
  bool nx = needs_grad(x);
  push("exp", {x}, out, [x, out, nx, n]() mutable {
    if (!nx) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * out.at(i);
  });
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::sqrt(Tensor<Real> x) {
  const int64_t n = x.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    CADV_CHECK(x.at(i) > Real(-1e-9), "sqrt: negative input ", double(x.at(i)));
    v[i] = std::sqrt(std::max(x.at(i), Real(0)));
  }
  Tensor<Real> out = make_out(x.shape(), std::move(v), "sqrt");
  bool nx = needs_grad(x);
  push("sqrt", {x}, out, [x, out, nx, n]() mutable {
    if (!nx) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (int64_t i = 0; i < n; ++i)
      gx[i] += g[i] * Real(0.5) / std::sqrt(std::max(x.at(i), Real(1e-12)));
  });
  return out;
}

// ---- blocked (zero-gradient) nodes ------------------------------------------

template <class Real>
Tensor<Real> Tape<Real>::clamp(Tensor<Real> x, Real lo, Real hi) {
  CADV_CHECK(lo <= hi, "clamp: lo > hi");
  const int64_t n = x.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[i] = std::min(std::max(x.at(i), lo), hi);
  Tensor<Real> out = make_out(x.shape(), std::move(v), "clamp");
  // straight-blocked: output is a constant as far as the tape is concerned
  needs_[out.raw()] = false;
  produced_[out.raw()] = true;
  nodes_.push_back(Node{"clamp", {x}, out, []() {}});
  return out;
}

template <class Real>
Tensor<Real> Tape<Real>::sign(Tensor<Real> x) {
  const int64_t n = x.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    v[i] = x.at(i) > Real(0) ? Real(1) : (x.at(i) < Real(0) ? Real(-1) : Real(0));
  Tensor<Real> out = make_out(x.shape(), std::move(v), "sign");
  needs_[out.raw()] = false;
  produced_[out.raw()] = true;
  nodes_.push_back(Node{"sign", {x}, out, []() {}});
  return out;
}

// ---- custom ------------------------------------------------------------------

template <class Real>
Tensor<Real> Tape<Real>::custom(const char* kind, std::vector<Tensor<Real>> inputs,
                                Tensor<Real> out, std::function<void()> back) {
  throw_if_nonfinite(out, kind);
  push(kind, std::move(inputs), out, std::move(back));
  return out;
}

// ---- driver --------------------------------------------------------------------

template <class Real>
void Tape<Real>::backward(const Tensor<Real>& loss) {
  CADV_CHECK(loss.defined(), "backward: undefined loss");
  if (loss.numel() != 1) throw Error("backward: loss is not scalar");
  if (consumed_) throw Error("backward: tape already consumed (reset() to rearm)");
  consumed_ = true;

  // Leaves get exact grads unless accumulation is explicitly on.
  if (!accumulate_) {
    for (auto& node : nodes_)
      for (auto& in : node.inputs)
        if (needs_grad(in) && !produced_.count(in.raw())) {
          in.grad();  // ensure allocated
          in.zero_grad();
        }
  } else {
    for (auto& node : nodes_)
      for (auto& in : node.inputs)
        if (needs_grad(in) && !produced_.count(in.raw())) in.grad();
  }

  auto it = needs_.find(loss.raw());
  if (it == needs_.end() || !it->second) return;  // constant loss: leaf grads are zero

  Tensor<Real> l = loss;
  l.grad()[0] += Real(1);
  for (auto rit = nodes_.rbegin(); rit != nodes_.rend(); ++rit) {
    auto nit = needs_.find(rit->out.raw());
    if (nit != needs_.end() && nit->second) rit->back();
  }
}

template <class Real>
void Tape<Real>::reset() {
  nodes_.clear();
  needs_.clear();
  produced_.clear();
  consumed_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace cadv
