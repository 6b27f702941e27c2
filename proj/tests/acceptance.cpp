// Acceptance gate: ten numbered checks, one PASS/FAIL line each, exit 0 iff
// all pass. The desk-scale experiment pool (nine training runs) is trained
// once and shared by checks 5 and 7-10.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cadv/attacks.hpp"
#include "cadv/causal_align.hpp"
#include "cadv/data.hpp"
#include "cadv/diagnostics.hpp"
#include "cadv/finite_diff.hpp"
#include "cadv/harness.hpp"
#include "cadv/model.hpp"
#include "cadv/objectives.hpp"
#include "cadv/rng.hpp"
#include "test_util.hpp"

using cadv::AttackConfig;
using cadv::Classifier;
using cadv::Dataset;
using cadv::GradScope;
using cadv::ObjectiveSpec;
using cadv::Rng;
using cadv::RunConfig;
using cadv::Shape;
using cadv::Tape;
using cadv::Tensor;
using cadv::Variant;

namespace {

bool g_all_pass = true;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void verdict(int idx, bool pass, double secs, const std::string& detail) {
  std::printf("criterion %2d: %s  [%7.1fs]  %s\n", idx, pass ? "PASS" : "FAIL", secs,
              detail.c_str());
  std::fflush(stdout);
  g_all_pass = g_all_pass && pass;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------------------
// criterion 1: gradient suite

// Weighted-readout finite-difference check of one op instance: every
// grad-enabled input's tape gradient must match central differences.
template <class Build>
double fd_check(Rng& rng, std::vector<Tensor<double>> inputs, Build&& build) {
  Tape<double> probe(GradScope::watched);
  Tensor<double> out0 = build(probe, inputs);
  Tensor<double> w = testutil::rand_tensor<double>(rng, out0.shape(), -1.0, 1.0, false);

  auto scalar = [&](Tape<double>& t, std::vector<Tensor<double>>& ins) {
    Tensor<double> out = build(t, ins);
    return out.numel() == 1 ? out : t.sum(t.mul(out, w));
  };

  Tape<double> tape;
  tape.backward(scalar(tape, inputs));
  double worst = 0.0;
  for (Tensor<double>& in : inputs) {
    if (!in.requires_grad()) continue;
    Tensor<double> got(in.shape());
    std::copy(in.grad().begin(), in.grad().end(), got.data().begin());
    auto f = [&](Tensor<double>&) {
      Tape<double> t;
      return scalar(t, inputs).item();
    };
    Tensor<double> fd = cadv::finite_diff_grad(f, in, 1e-6);
    worst = std::max(worst, cadv::max_rel_err(got, fd));
  }
  return worst;
}

// keeps relu/maxpool inputs away from kinks so central differences are valid
Tensor<double> kink_free(Rng& rng, Shape shape) {
  Tensor<double> x = testutil::rand_tensor<double>(rng, std::move(shape), -1.5, 1.5, true);
  for (double& v : x.data())
    if (std::abs(v) < 0.02) v += v < 0 ? -0.05 : 0.05;
  return x;
}

bool criterion_gradients(std::string* detail) {
  constexpr int kInst = 50;
  constexpr double kTol = 1e-4;
  double worst = 0.0;
  std::string worst_op = "none";
  auto track = [&](const char* op, double err) {
    if (err > worst) {
      worst = err;
      worst_op = op;
    }
  };

  {  // add, including the row-vector broadcast form
    Rng rng(Rng::derive(4100, 1));
    for (int i = 0; i < kInst; ++i) {
      const int64_t B = 1 + int64_t(rng.randint(3)), n = 1 + int64_t(rng.randint(5));
      auto a = testutil::rand_tensor<double>(rng, {B, n}, -1.5, 1.5, true);
      auto b = testutil::rand_tensor<double>(rng, i % 2 ? Shape{n} : Shape{B, n}, -1.5, 1.5, true);
      track("add", fd_check(rng, {a, b},
                            [](Tape<double>& t, auto& in) { return t.add(in[0], in[1]); }));
    }
  }
  {  // sub, mul
    Rng rng(Rng::derive(4100, 2));
    for (int i = 0; i < kInst; ++i) {
      const Shape s{1 + int64_t(rng.randint(3)), 1 + int64_t(rng.randint(5))};
      auto a = testutil::rand_tensor<double>(rng, s, -1.5, 1.5, true);
      auto b = testutil::rand_tensor<double>(rng, s, -1.5, 1.5, true);
      track("sub", fd_check(rng, {a, b},
                            [](Tape<double>& t, auto& in) { return t.sub(in[0], in[1]); }));
      auto c = testutil::rand_tensor<double>(rng, s, -1.5, 1.5, true);
      auto d = testutil::rand_tensor<double>(rng, s, -1.5, 1.5, true);
      track("mul", fd_check(rng, {c, d},
                            [](Tape<double>& t, auto& in) { return t.mul(in[0], in[1]); }));
    }
  }
  {  // scalar_mul
    Rng rng(Rng::derive(4100, 3));
    for (int i = 0; i < kInst; ++i) {
      auto a = testutil::rand_tensor<double>(rng, {2, 3}, -1.5, 1.5, true);
      const double c = rng.uniform(-2.0, 2.0);
      track("scalar_mul", fd_check(rng, {a}, [c](Tape<double>& t, auto& in) {
              return t.scalar_mul(in[0], c);
            }));
    }
  }
  {  // matmul, all four transpose combinations
    Rng rng(Rng::derive(4100, 4));
    for (int i = 0; i < kInst + 2; ++i) {
      const bool ta = i & 1, tb = (i >> 1) & 1;
      const int64_t m = 1 + int64_t(rng.randint(4)), kk = 1 + int64_t(rng.randint(4)),
                    n = 1 + int64_t(rng.randint(4));
      auto a = testutil::rand_tensor<double>(rng, ta ? Shape{kk, m} : Shape{m, kk}, -1.5, 1.5, true);
      auto b = testutil::rand_tensor<double>(rng, tb ? Shape{n, kk} : Shape{kk, n}, -1.5, 1.5, true);
      track("matmul", fd_check(rng, {a, b}, [ta, tb](Tape<double>& t, auto& in) {
              return t.matmul(in[0], in[1], ta, tb);
            }));
    }
  }
  {  // conv2d with/without bias and padding
    Rng rng(Rng::derive(4100, 5));
    for (int i = 0; i < kInst; ++i) {
      const int64_t B = 1 + int64_t(rng.randint(2)), cin = 1 + int64_t(rng.randint(2));
      const int64_t cout = 1 + int64_t(rng.randint(3)), h = 4 + int64_t(rng.randint(3));
      const int64_t w = 4 + int64_t(rng.randint(3)), kk = 2 + int64_t(rng.randint(2));
      const int pad = int(rng.randint(2));
      auto x = testutil::rand_tensor<double>(rng, {B, cin, h, w}, -1.0, 1.0, true);
      auto wt = testutil::rand_tensor<double>(rng, {cout, cin, kk, kk}, -1.0, 1.0, true);
      std::vector<Tensor<double>> ins{x, wt};
      const bool with_bias = i % 2 == 0;
      if (with_bias) ins.push_back(testutil::rand_tensor<double>(rng, {cout}, -1.0, 1.0, true));
      track("conv2d", fd_check(rng, ins, [pad, with_bias](Tape<double>& t, auto& in) {
              return t.conv2d(in[0], in[1], with_bias ? in[2] : Tensor<double>(), pad);
            }));
    }
  }
  {  // maxpool2x2, relu
    Rng rng(Rng::derive(4100, 6));
    for (int i = 0; i < kInst; ++i) {
      auto x = testutil::rand_tensor<double>(rng, {1 + int64_t(rng.randint(2)), 2, 4, 6}, -1.5, 1.5, true);
      track("maxpool2x2",
            fd_check(rng, {x}, [](Tape<double>& t, auto& in) { return t.maxpool2x2(in[0]); }));
      auto r = kink_free(rng, {2, 7});
      track("relu", fd_check(rng, {r}, [](Tape<double>& t, auto& in) { return t.relu(in[0]); }));
    }
  }
  {  // reshape, flatten, log_softmax, gather
    Rng rng(Rng::derive(4100, 7));
    for (int i = 0; i < kInst; ++i) {
      auto x = testutil::rand_tensor<double>(rng, {2, 3, 2}, -1.5, 1.5, true);
      track("reshape", fd_check(rng, {x}, [](Tape<double>& t, auto& in) {
              return t.reshape(in[0], {6, 2});
            }));
      auto fx = testutil::rand_tensor<double>(rng, {3, 2, 2}, -1.5, 1.5, true);
      track("flatten",
            fd_check(rng, {fx}, [](Tape<double>& t, auto& in) { return t.flatten(in[0]); }));
      const int64_t B = 2 + int64_t(rng.randint(3)), k = 2 + int64_t(rng.randint(4));
      auto z = testutil::rand_tensor<double>(rng, {B, k}, -2.0, 2.0, true);
      track("log_softmax",
            fd_check(rng, {z}, [](Tape<double>& t, auto& in) { return t.log_softmax(in[0]); }));
      auto g = testutil::rand_tensor<double>(rng, {B, k}, -2.0, 2.0, true);
      std::vector<int64_t> idx = testutil::rand_labels(rng, B, k);
      track("gather", fd_check(rng, {g}, [idx](Tape<double>& t, auto& in) {
              return t.gather(in[0], idx);
            }));
    }
  }
  {  // sum, mean, exp, sqrt
    Rng rng(Rng::derive(4100, 8));
    for (int i = 0; i < kInst; ++i) {
      auto x = testutil::rand_tensor<double>(rng, {2, 5}, -1.5, 1.5, true);
      track("sum", fd_check(rng, {x}, [](Tape<double>& t, auto& in) { return t.sum(in[0]); }));
      auto m = testutil::rand_tensor<double>(rng, {3, 4}, -1.5, 1.5, true);
      track("mean", fd_check(rng, {m}, [](Tape<double>& t, auto& in) { return t.mean(in[0]); }));
      auto e = testutil::rand_tensor<double>(rng, {2, 4}, -2.0, 1.5, true);
      track("exp", fd_check(rng, {e}, [](Tape<double>& t, auto& in) { return t.exp(in[0]); }));
      auto s = testutil::rand_tensor<double>(rng, {2, 4}, 0.05, 3.0, true);
      track("sqrt", fd_check(rng, {s}, [](Tape<double>& t, auto& in) { return t.sqrt(in[0]); }));
    }
  }
  {  // clamp and sign are pinned zero-gradient projection ops
    Rng rng(Rng::derive(4100, 9));
    for (int i = 0; i < kInst; ++i) {
      auto x = testutil::rand_tensor<double>(rng, {3, 4}, -2.0, 2.0, true);
      Tape<double> t;
      Tensor<double> out = i % 2 ? t.sign(x) : t.clamp(x, -0.5, 0.5);
      t.backward(t.sum(out));
      for (double g : x.grad())
        if (g != 0.0) track(i % 2 ? "sign" : "clamp", 1.0);
    }
  }
  {  // fused style bound (including sigma = 0) and the CW margin
    Rng rng(Rng::derive(4100, 10));
    for (int i = 0; i < kInst; ++i) {
      const int64_t B = 1 + int64_t(rng.randint(3)), ds = 1 + int64_t(rng.randint(4));
      const int64_t k = 2 + int64_t(rng.randint(3));
      const double sigma = i < 10 ? 0.0 : rng.uniform(0.1, 1.5);
      auto mu = testutil::rand_tensor<double>(rng, {B, ds}, -1.0, 1.0, true);
      auto wg = testutil::rand_tensor<double>(rng, {k, ds}, -1.0, 1.0, true);
      std::vector<int64_t> y = testutil::rand_labels(rng, B, k);
      track("style_bound_ce", fd_check(rng, {mu, wg}, [y, sigma](Tape<double>& t, auto& in) {
              return cadv::style_bound_ce(t, in[0], in[1], y, sigma);
            }));
      auto z = testutil::rand_tensor<double>(rng, {B, k}, -2.0, 2.0, true);
      std::vector<int64_t> yy = testutil::rand_labels(rng, B, k);
      track("cw_margin", fd_check(rng, {z}, [yy](Tape<double>& t, auto& in) {
              return cadv::cw_margin_loss(t, in[0], yy, 0.37);
            }));
    }
  }

  // every objective variant, differentiated through every model parameter
  const Variant variants[] = {Variant::madry,           Variant::trades,
                              Variant::causaladv_m,     Variant::causaladv_t,
                              Variant::causaladv_m_sqrt, Variant::causaladv_t_sqrt};
  for (Variant v : variants) {
    Rng rng(Rng::derive(4200, uint64_t(v)));
    for (int i = 0; i < kInst; ++i) {
      cadv::NetworkSpec spec;
      spec.arch = cadv::Arch::mlp;
      spec.input_dim = 8;
      spec.layers = {7, 6};
      spec.k = 3;
      spec.d_s = 2;
      spec.sigma = rng.uniform(0.1, 1.2);
      Classifier<double> model = cadv::build_classifier(spec, Rng::derive(4300, uint64_t(v), i));

      ObjectiveSpec os = ObjectiveSpec::defaults(v);
      if (os.causaladv_family()) {
        os.lambda = rng.uniform(0.2, 1.5);
        os.beta = rng.uniform(0.5, 2.0);
      }
      if (os.trades_family()) os.trades_beta = rng.uniform(1.0, 6.0);

      const int64_t B = 3;
      auto x = testutil::rand_tensor<double>(rng, {B, spec.input_dim}, 0.05, 0.95, false);
      Tensor<double> xa = x.clone();
      for (double& vv : xa.data()) vv = std::clamp(vv + rng.uniform(-0.1, 0.1), 0.0, 1.0);
      std::vector<int64_t> y = testutil::rand_labels(rng, B, spec.k);

      Tape<double> tape;
      auto lb = cadv::causaladv_objective(tape, model, x, xa, y, os);
      tape.backward(lb.total);
      for (Tensor<double>& p : model.parameters()) {
        Tensor<double> got(p.shape());
        std::copy(p.grad().begin(), p.grad().end(), got.data().begin());
        auto f = [&](Tensor<double>&) {
          Tape<double> t;
          return cadv::causaladv_objective(t, model, x, xa, y, os).total.item();
        };
        Tensor<double> fd = cadv::finite_diff_grad(f, p, 1e-6);
        track(cadv::variant_name(v), std::max(0.0, cadv::max_rel_err(got, fd)));
      }
    }
  }

  *detail = fmt("18 ops + 6 objective variants, 50 instances each; worst rel err %.2e (%s)",
                worst, worst_op.c_str());
  return worst < kTol;
}

// ---------------------------------------------------------------------------
// criterion 2: closed-form style CE bound vs Monte Carlo

bool criterion_bound(std::string* detail) {
  Rng rng(4400);
  double worst_gap = -1e30, worst_zero = 0.0;
  bool ok = true;
  for (int i = 0; i < 100; ++i) {
    const int64_t k = 2 + int64_t(rng.randint(9));     // <= 10
    const int64_t ds = 1 + int64_t(rng.randint(16));   // <= 16
    const double sigma = i < 15 ? 0.0 : rng.uniform(0.0, 2.0);
    cadv::StyleDistribution dist;
    dist.sigma = sigma;
    dist.mu.resize(size_t(ds));
    for (double& m : dist.mu) m = rng.normal() * 0.8;
    std::vector<double> Wg(size_t(k * ds));
    for (double& w : Wg) w = rng.normal() * 0.7;
    const int64_t y = int64_t(rng.randint(uint64_t(k)));

    const double bound = cadv::style_ce_upper_bound(dist, Wg, k, y);
    const cadv::McEstimate mc = cadv::mc_style_ce(dist, Wg, k, y, 100000, Rng::derive(4401, i));
    if (sigma == 0.0) {
      worst_zero = std::max(worst_zero, std::abs(mc.mean - bound));
      ok = ok && std::abs(mc.mean - bound) < 1e-9;
    } else {
      const double gap = mc.mean - (bound + 3.0 * mc.stderr_);
      worst_gap = std::max(worst_gap, gap);
      ok = ok && gap <= 0.0;
    }
  }
  *detail = fmt("100 instances: worst mc-(bound+3se) %.2e, worst sigma=0 gap %.2e",
                worst_gap, worst_zero);
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 3: null-space style map (residual + sampled cross-covariance)

bool criterion_lemma1(std::string* detail) {
  Rng rng(4500);
  double worst_resid = 0.0, worst_xcov = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int64_t d = 8 + int64_t(rng.randint(25));
    const int64_t k = 1 + int64_t(rng.randint(5));
    const int64_t ds = 1 + int64_t(rng.randint(uint64_t(d - k)));

    std::vector<double> Wc(size_t(k * d));
    for (double& w : Wc) w = rng.uniform(-1.0, 1.0) / std::sqrt(double(d));

    // covariance estimate produced the production way: EMA + shrinkage updates
    cadv::CovarianceEstimate est = cadv::CovarianceEstimate::identity(d);
    const int64_t B = 256;
    std::vector<double> R(size_t(B * d));
    for (int rep = 0; rep < 3; ++rep) {
      const double scale = rng.uniform(0.5, 2.0), shift = rng.uniform(-0.5, 0.5);
      for (double& v : R) v = shift + scale * rng.normal();
      cadv::update_covariance(est, R.data(), B, d);
    }

    const std::vector<double> Ws = cadv::orthogonal_style_map(Wc, k, d, est, ds);
    worst_resid = std::max(worst_resid,
                           cadv::style_orthogonality_residual(Ws, ds, Wc, k, d, est));

    // sample r ~ N(m, M) from the same estimate and measure cov(W_c r, W_s r)
    Eigen::Map<const Eigen::MatrixXd> M(est.M.data(), d, d);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M);
    Eigen::MatrixXd L =
        eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Eigen::Map<const Eigen::MatrixXd> WcM(Wc.data(), d, k);   // column-major view: Wc^T
    Eigen::Map<const Eigen::MatrixXd> WsM(Ws.data(), d, ds);  // Ws^T

    const int64_t n = 100000;
    Eigen::VectorXd z(d), r(d);
    Eigen::VectorXd c_sum = Eigen::VectorXd::Zero(k), s_sum = Eigen::VectorXd::Zero(ds);
    Eigen::MatrixXd cs_sum = Eigen::MatrixXd::Zero(k, ds);
    Rng srng(Rng::derive(4501, i));
    for (int64_t t = 0; t < n; ++t) {
      for (int64_t j = 0; j < d; ++j) z[j] = srng.normal();
      r = L * z;
      for (int64_t j = 0; j < d; ++j) r[j] += est.m[size_t(j)];
      const Eigen::VectorXd c = WcM.transpose() * r;
      const Eigen::VectorXd s = WsM.transpose() * r;
      c_sum += c;
      s_sum += s;
      cs_sum += c * s.transpose();
    }
    const Eigen::MatrixXd xcov =
        cs_sum / double(n) - (c_sum / double(n)) * (s_sum / double(n)).transpose();
    worst_xcov = std::max(worst_xcov, xcov.cwiseAbs().maxCoeff());
  }
  *detail = fmt("20 instances, 1e5 samples: max residual %.2e, max |cross-cov| %.2e",
                worst_resid, worst_xcov);
  return worst_resid < 1e-6 && worst_xcov < 5e-2;
}

// ---------------------------------------------------------------------------
// criterion 4: reduction identities (losses + full training traces)

bool rows_match(const cadv::MetricLog& a, const cadv::MetricLog& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (size_t i = 0; i < a.rows.size(); ++i) {
    const auto &x = a.rows[i], &y = b.rows[i];
    if (x.epoch != y.epoch || x.total_loss != y.total_loss || x.adv_ce != y.adv_ce ||
        x.nat_ce != y.nat_ce || x.style_adv != y.style_adv || x.style_nat != y.style_nat ||
        x.nat_val_acc != y.nat_val_acc || x.rob_val_acc != y.rob_val_acc || x.lr != y.lr)
      return false;
  }
  return true;
}

bool params_match(const Classifier<double>& a, const Classifier<double>& b) {
  auto na = a.named_parameters(), nb = b.named_parameters();
  if (na.size() != nb.size()) return false;
  for (size_t i = 0; i < na.size(); ++i)
    if (na[i].first != nb[i].first || !testutil::bitwise_equal(na[i].second, nb[i].second))
      return false;
  return true;
}

bool criterion_reductions(std::string* detail) {
  Rng rng(4600);
  double worst_m = 0.0, worst_t = 0.0;
  for (int i = 0; i < 100; ++i) {
    cadv::NetworkSpec spec;
    spec.arch = cadv::Arch::mlp;
    spec.input_dim = 10;
    spec.layers = {8, 6};
    spec.k = 3;
    spec.d_s = 2;
    Classifier<double> model = cadv::build_classifier(spec, Rng::derive(4601, i));
    const int64_t B = 5;
    auto x = testutil::rand_tensor<double>(rng, {B, 10}, 0.0, 1.0, false);
    Tensor<double> xa = x.clone();
    for (double& v : xa.data()) v = std::clamp(v + rng.uniform(-0.2, 0.2), 0.0, 1.0);
    std::vector<int64_t> y = testutil::rand_labels(rng, B, 3);

    ObjectiveSpec madry = ObjectiveSpec::defaults(Variant::madry);
    ObjectiveSpec cm = ObjectiveSpec::defaults(Variant::causaladv_m);
    cm.lambda = 0.0;
    cm.gamma = 0.0;
    Tape<double> t1, t2;
    const double lm = cadv::causaladv_objective(t1, model, x, xa, y, madry).total.item();
    const double lcm = cadv::causaladv_objective(t2, model, x, xa, y, cm).total.item();
    worst_m = std::max(worst_m, std::abs(lm - lcm));

    ObjectiveSpec trades = ObjectiveSpec::defaults(Variant::trades);
    ObjectiveSpec ct = ObjectiveSpec::defaults(Variant::causaladv_t);
    ct.lambda = 0.0;
    Tape<double> t3, t4;
    const double lt = cadv::causaladv_objective(t3, model, x, xa, y, trades).total.item();
    const double lct = cadv::causaladv_objective(t4, model, x, xa, y, ct).total.item();
    worst_t = std::max(worst_t, std::abs(lt - lct));
  }
  bool ok = worst_m <= 1e-12 && worst_t <= 1e-12;

  // full training traces coincide under identical seeds
  cadv::SyntheticCausalConfig sc;
  sc.k = 4;
  sc.gain = 0.3;
  sc.noise = 0.01;
  Dataset data = cadv::synth_generate(sc, 650, 21);
  RunConfig base = cadv::default_run_config();
  base.dataset_id = "synth";
  base.net.arch = cadv::Arch::mlp;
  base.net.input_dim = sc.input_dim();
  base.net.layers = {16, 12};
  base.net.k = 4;
  base.net.d_s = 4;
  base.train_attack.epsilon = 0.1;
  base.train_attack.step_size = 0.05;
  base.train_attack.iterations = 3;
  base.val_attack = base.train_attack;
  base.val_attack.random_start = false;
  base.epochs = 2;
  base.batch_size = 64;
  base.val_split = 150;
  base.seed = 7;
  base.opt.lr = 0.05;

  RunConfig m_cfg = base;
  m_cfg.objective = ObjectiveSpec::defaults(Variant::madry);
  RunConfig cm_cfg = base;
  cm_cfg.objective = ObjectiveSpec::defaults(Variant::causaladv_m);
  cm_cfg.objective.lambda = 0.0;
  cm_cfg.objective.gamma = 0.0;
  cadv::TrainResult rm = cadv::train(m_cfg, data);
  cadv::TrainResult rcm = cadv::train(cm_cfg, data);
  const bool m_trace = rows_match(rm.log, rcm.log) && params_match(rm.last, rcm.last);

  RunConfig t_cfg = base;
  t_cfg.objective = ObjectiveSpec::defaults(Variant::trades);
  RunConfig ct_cfg = base;
  ct_cfg.objective = ObjectiveSpec::defaults(Variant::causaladv_t);
  ct_cfg.objective.lambda = 0.0;
  cadv::TrainResult rt = cadv::train(t_cfg, data);
  cadv::TrainResult rct = cadv::train(ct_cfg, data);
  const bool t_trace = rows_match(rt.log, rct.log) && params_match(rt.last, rct.last);

  ok = ok && m_trace && t_trace;
  *detail = fmt("100 batches: |m-cm| %.2e, |t-ct| %.2e; traces %s/%s", worst_m, worst_t,
                m_trace ? "equal" : "DIFFER", t_trace ? "equal" : "DIFFER");
  return ok;
}

// ---------------------------------------------------------------------------
// desk-scale experiment pool (shared by criteria 5, 7, 8, 9, 10)

struct DeskRun {
  cadv::TrainResult result;
  cadv::RobustnessReport best_report, last_report;
};

RunConfig desk_config(Variant v, uint64_t seed) {
  RunConfig cfg = cadv::default_run_config();
  cfg.dataset_id = "glyphs";
  cfg.net.arch = cadv::Arch::mlp;
  cfg.net.input_dim = 784;
  cfg.net.layers = {300, 200};
  cfg.net.k = 10;
  cfg.net.d_s = 64;
  cfg.objective = ObjectiveSpec::defaults(v);
  cfg.epochs = 15;
  cfg.batch_size = 128;
  cfg.val_split = 1000;
  cfg.seed = seed;
  cfg.opt.lr = 0.01;
  cfg.opt.lr_milestones = {12};
  return cfg;
}

AttackConfig pgd40_attack() {
  AttackConfig a;
  a.epsilon = 0.3;
  a.step_size = 0.01;
  a.iterations = 40;
  return a;
}

std::map<std::string, DeskRun> train_desk_pool(const Dataset& train, const Dataset& test) {
  const std::vector<std::pair<std::string, AttackConfig>> evals = {{"pgd40", pgd40_attack()}};
  std::map<std::string, DeskRun> pool;
  const std::vector<std::pair<std::string, std::pair<Variant, uint64_t>>> runs = {
      {"madry_s0", {Variant::madry, 0}},
      {"madry_s1", {Variant::madry, 1}},
      {"madry_s2", {Variant::madry, 2}},
      {"cadvm_s0", {Variant::causaladv_m, 0}},
      {"cadvm_s1", {Variant::causaladv_m, 1}},
      {"cadvm_s2", {Variant::causaladv_m, 2}},
      {"cadvt_s0", {Variant::causaladv_t, 0}},
      {"cadvm_sqrt_s0", {Variant::causaladv_m_sqrt, 0}},
      {"cadvt_sqrt_s0", {Variant::causaladv_t_sqrt, 0}},
  };
  for (const auto& [name, vs] : runs) {
    Timer t;
    DeskRun run;
    run.result = cadv::train(desk_config(vs.first, vs.second), train);
    run.best_report = cadv::evaluate_robustness(run.result.best, test, evals, "best");
    run.last_report = cadv::evaluate_robustness(run.result.last, test, evals, "last");
    std::printf("    pool %-14s nat %.4f  pgd40(best) %.4f  pgd40(last) %.4f  [%.0fs]\n",
                name.c_str(), run.best_report.natural, run.best_report.attacks[0].accuracy,
                run.last_report.attacks[0].accuracy, t.s());
    std::fflush(stdout);
    pool.emplace(name, std::move(run));
  }
  return pool;
}

// ---------------------------------------------------------------------------
// criterion 5: attack invariants on the trained desk model

bool criterion_attacks(const Classifier<double>& model, const Dataset& test, std::string* detail) {
  Rng rng(4700);
  bool ball_ok = true, fgsm_ok = true;
  const double eps_tol = 0.0;  // feasibility is exact by construction

  for (int i = 0; i < 12; ++i) {
    std::vector<int64_t> idx(32);
    for (auto& id : idx) id = int64_t(rng.randint(uint64_t(test.size())));
    Tensor<double> x = cadv::batch_x<double>(test, idx, true);
    std::vector<int64_t> y = cadv::batch_y(test, idx);

    AttackConfig cfg;
    cfg.epsilon = 0.05 + 0.05 * double(i % 5);
    cfg.step_size = cfg.epsilon / 3.0;
    cfg.iterations = 1 + int64_t(i % 4) * 3;
    cfg.random_start = i % 2 == 1;
    cfg.seed = Rng::derive(4701, i);
    cfg.loss_kind = i % 3 == 0   ? AttackConfig::Loss::cw_margin
                    : i % 3 == 1 ? AttackConfig::Loss::kl_to_natural
                                 : AttackConfig::Loss::ce;
    auto adv = cadv::pgd(model, x, y, cfg);
    for (int64_t j = 0; j < x.numel(); ++j) {
      const double d = adv.delta.at(j), xa = adv.x_adv.at(j);
      if (std::abs(d) > cfg.epsilon + eps_tol || xa < 0.0 || xa > 1.0 ||
          xa != x.at(j) + d)
        ball_ok = false;
    }
    if (adv.loss_trace.size() != size_t(cfg.iterations) + 1) ball_ok = false;

    // FGSM is PGD(K=1, eta=eps, no restart), bitwise
    auto a = cadv::fgsm(model, x, y, cfg.epsilon);
    AttackConfig one;
    one.epsilon = cfg.epsilon;
    one.step_size = cfg.epsilon;
    one.iterations = 1;
    auto b = cadv::pgd(model, x, y, one);
    if (!testutil::bitwise_equal(a.x_adv, b.x_adv)) fgsm_ok = false;
  }

  // robust accuracy non-increasing in K on the full eval split: fixed step
  // size and no restart, so the K = 10 iterate lies on the K = 40 trajectory
  AttackConfig k1 = pgd40_attack();
  k1.iterations = 1;
  AttackConfig k10 = pgd40_attack();
  k10.iterations = 10;
  AttackConfig k40 = pgd40_attack();
  const double a1 = cadv::dataset_accuracy(model, test, &k1);
  const double a10 = cadv::dataset_accuracy(model, test, &k10);
  const double a40 = cadv::dataset_accuracy(model, test, &k40);
  const bool mono = a1 >= a10 && a10 >= a40;

  *detail = fmt("ball/clamp + fgsm==pgd1 on 12 batches %s; acc K1/K10/K40 %.4f/%.4f/%.4f %s",
                ball_ok && fgsm_ok ? "hold" : "VIOLATED", a1, a10, a40,
                mono ? "non-increasing" : "NOT monotone");
  return ball_ok && fgsm_ok && mono;
}

// ---------------------------------------------------------------------------
// criterion 6: synthetic spurious-correlation experiment

void train_ce_full_batch(Classifier<double>& model, const Tensor<double>& x,
                         const std::vector<int64_t>& y, int iters, double lr) {
  std::vector<Tensor<double>> params = model.parameters();
  for (int it = 0; it < iters; ++it) {
    Tape<double> tape;
    Tensor<double> loss = cadv::ce_mean(tape, cadv::forward(tape, model, x).logits, y);
    for (auto& p : params) p.zero_grad();
    tape.backward(loss);
    for (auto& p : params)
      for (size_t j = 0; j < p.data().size(); ++j) p.data()[j] -= lr * p.grad()[j];
  }
}

double model_accuracy(const Classifier<double>& model, const Dataset& ds) {
  std::vector<int64_t> idx(size_t(ds.size()));
  std::iota(idx.begin(), idx.end(), 0);
  Tensor<double> x = cadv::batch_x<double>(ds, idx, true);
  Tape<double> tape(GradScope::watched);
  return double(cadv::count_correct(cadv::forward(tape, model, x).logits, ds.y)) /
         double(ds.size());
}

bool criterion_synthetic(std::string* detail) {
  cadv::SyntheticCausalConfig sc;
  sc.k = 5;
  sc.rho = 0.9;
  sc.gain = 0.3;
  sc.noise = 0.01;
  Dataset train = cadv::synth_generate(sc, 2500, 61);
  Dataset test = cadv::synth_generate(sc, 1200, 62);
  Dataset flipped = cadv::flip_association(test, sc);

  cadv::NetworkSpec spec;
  spec.arch = cadv::Arch::mlp;
  spec.input_dim = sc.input_dim();
  spec.layers = {32, 16};
  spec.k = sc.k;
  spec.d_s = 4;
  Classifier<double> model = cadv::build_classifier(spec, 18);
  std::vector<int64_t> tidx(size_t(train.size()));
  std::iota(tidx.begin(), tidx.end(), 0);
  train_ce_full_batch(model, cadv::batch_x<double>(train, tidx, true), train.y, 1200, 0.5);

  const double acc_in = model_accuracy(model, test);
  const double acc_flip = model_accuracy(model, flipped);
  const double drop = acc_in - acc_flip;

  // content-only probe: the flip must leave it untouched
  cadv::LinearProbe probe = cadv::train_linear_probe(
      cadv::column_block(cadv::batch_x<double>(train, tidx, true), 0, sc.block_c), train.y,
      sc.k, 400, 1.0, 91);
  std::vector<int64_t> eidx(size_t(test.size()));
  std::iota(eidx.begin(), eidx.end(), 0);
  const double probe_in = cadv::probe_accuracy(
      probe, cadv::column_block(cadv::batch_x<double>(test, eidx, true), 0, sc.block_c), test.y);
  const double probe_flip = cadv::probe_accuracy(
      probe, cadv::column_block(cadv::batch_x<double>(flipped, eidx, true), 0, sc.block_c),
      flipped.y);

  AttackConfig att;
  att.epsilon = 0.3;
  att.step_size = 0.075;
  att.iterations = 10;
  std::vector<cadv::StyleGapRow> rows = cadv::conditional_association_gap(model, test, att);
  int64_t wide = 0;
  for (const auto& r : rows) wide += r.gap() > 1.0 ? 1 : 0;
  const bool gap_ok = double(wide) >= 0.8 * double(rows.size());

  *detail = fmt("flip drop %.3f (in %.3f), probe shift %.4f, gap>1 in %lld/%zu buckets",
                drop, acc_in, std::abs(probe_in - probe_flip), (long long)wide, rows.size());
  return drop > 0.20 && std::abs(probe_in - probe_flip) < 0.02 && gap_ok;
}

// ---------------------------------------------------------------------------
// criteria 7-10 share the desk pool

double median3(double a, double b, double c) {
  double v[3] = {a, b, c};
  std::sort(v, v + 3);
  return v[1];
}

bool criterion_desk(const std::map<std::string, DeskRun>& pool, std::string* detail) {
  auto rob_best = [&](const std::string& n) { return pool.at(n).best_report.attacks[0].accuracy; };
  auto rob_last = [&](const std::string& n) { return pool.at(n).last_report.attacks[0].accuracy; };
  auto nat_best = [&](const std::string& n) { return pool.at(n).best_report.natural; };

  const double m_nat = median3(nat_best("cadvm_s0"), nat_best("cadvm_s1"), nat_best("cadvm_s2"));
  const double m_rob = median3(rob_best("cadvm_s0"), rob_best("cadvm_s1"), rob_best("cadvm_s2"));
  const double med_cm = m_rob;
  const double med_md = median3(rob_best("madry_s0"), rob_best("madry_s1"), rob_best("madry_s2"));
  const double gap_cm = median3(rob_best("cadvm_s0") - rob_last("cadvm_s0"),
                                rob_best("cadvm_s1") - rob_last("cadvm_s1"),
                                rob_best("cadvm_s2") - rob_last("cadvm_s2"));
  const double gap_md = median3(rob_best("madry_s0") - rob_last("madry_s0"),
                                rob_best("madry_s1") - rob_last("madry_s1"),
                                rob_best("madry_s2") - rob_last("madry_s2"));

  const bool ok = m_nat >= 0.98 && m_rob >= 0.85 && med_cm >= med_md - 0.003 && gap_cm <= gap_md;
  *detail = fmt("cadv-m nat %.4f rob %.4f; med rob cadv-m %.4f vs madry %.4f; "
                "best-last gap %.4f vs %.4f",
                m_nat, m_rob, med_cm, med_md, gap_cm, gap_md);
  return ok;
}

bool criterion_adaptive(const std::map<std::string, DeskRun>& pool, const Dataset& test,
                        std::string* detail) {
  const Classifier<double>& model = pool.at("cadvm_s0").result.best;
  AttackConfig plain = pgd40_attack();
  const double acc_plain = cadv::dataset_accuracy(model, test, &plain);

  ObjectiveSpec os = ObjectiveSpec::defaults(Variant::causaladv_m);
  AttackConfig ad = pgd40_attack();
  ad.loss_kind = AttackConfig::Loss::adaptive_full;
  double correct = 0;
  for (int64_t lo = 0; lo < test.size(); lo += 256) {
    const int64_t hi = std::min(test.size(), lo + 256);
    std::vector<int64_t> idx(size_t(hi - lo));
    std::iota(idx.begin(), idx.end(), lo);
    Tensor<double> x = cadv::batch_x<double>(test, idx, true);
    std::vector<int64_t> y = cadv::batch_y(test, idx);
    AttackConfig a = ad;
    a.seed = Rng::derive(ad.seed, 0x9e11, uint64_t(lo));
    auto adv = cadv::adaptive_pgd(model, x, y, a, os);
    Tape<double> tape(GradScope::watched);
    correct += double(cadv::count_correct(cadv::forward(tape, model, adv.x_adv).logits, y));
  }
  const double acc_adaptive = correct / double(test.size());
  const double diff = std::abs(acc_adaptive - acc_plain);
  *detail = fmt("pgd40 %.4f vs adaptive %.4f, |diff| %.4f", acc_plain, acc_adaptive, diff);
  return diff < 0.02;
}

bool criterion_checklist(const std::map<std::string, DeskRun>& pool, const Dataset& test,
                         std::string* detail) {
  const Classifier<double>& model = pool.at("cadvm_s0").result.best;
  const Classifier<double>& surrogate = pool.at("cadvm_s1").result.best;
  AttackConfig base;
  base.epsilon = 0.3;
  base.step_size = 0.015;
  base.iterations = 20;
  cadv::ObfuscationChecklist cl = cadv::obfuscation_checklist(model, surrogate, test, base);
  *detail = fmt("fgsm %.4f > pgd %.4f: %s; blackbox %.4f > whitebox %.4f: %s; "
                "pgd %.4f > pgd5K %.4f: %s",
                cl.a.lhs, cl.a.rhs, cl.a.pass ? "yes" : "NO", cl.b.lhs, cl.b.rhs,
                cl.b.pass ? "yes" : "NO", cl.c.lhs, cl.c.rhs, cl.c.pass ? "yes" : "NO");
  return cl.all_pass() && !cl.a.degenerate;
}

bool criterion_sqrt(const std::map<std::string, DeskRun>& pool, std::string* detail) {
  auto rob = [&](const std::string& n) { return pool.at(n).best_report.attacks[0].accuracy; };
  auto finite_log = [&](const std::string& n) {
    for (const auto& row : pool.at(n).result.log.rows)
      if (!std::isfinite(row.total_loss)) return false;
    return true;
  };
  const double dm = std::abs(rob("cadvm_sqrt_s0") - rob("cadvm_s0"));
  const double dt = std::abs(rob("cadvt_sqrt_s0") - rob("cadvt_s0"));
  const bool ok = finite_log("cadvm_sqrt_s0") && finite_log("cadvt_sqrt_s0") && dm <= 0.03 &&
                  dt <= 0.03;
  *detail = fmt("sqrt-vs-base robust diff: m %.4f, t %.4f (both finite)", dm, dt);
  return ok;
}

}  // namespace

int main() {
  std::printf("acceptance gate: 10 criteria\n");

  {
    Timer t;
    std::string d;
    bool ok = criterion_gradients(&d);
    ok = ok && t.s() < 180.0;
    verdict(1, ok, t.s(), d);
  }
  {
    Timer t;
    std::string d;
    bool ok = criterion_bound(&d);
    ok = ok && t.s() < 120.0;
    verdict(2, ok, t.s(), d);
  }
  {
    Timer t;
    std::string d;
    bool ok = criterion_lemma1(&d);
    ok = ok && t.s() < 60.0;
    verdict(3, ok, t.s(), d);
  }
  {
    Timer t;
    std::string d;
    bool ok = criterion_reductions(&d);
    verdict(4, ok, t.s(), d);
  }

  // desk pool: glyph data, nine 15-epoch adversarial training runs
  Timer pool_timer;
  std::printf("  training desk pool (9 runs, PGD-10 eps=0.3, 15 epochs each)...\n");
  Dataset desk_train = cadv::glyph_digits(11000, 101);
  Dataset desk_test = cadv::glyph_digits(2000, 202);
  std::map<std::string, DeskRun> pool = train_desk_pool(desk_train, desk_test);
  const double pool_secs = pool_timer.s();

  {
    Timer t;
    std::string d;
    bool ok = criterion_attacks(pool.at("cadvm_s0").result.best, desk_test, &d);
    verdict(5, ok, t.s(), d);
  }
  {
    Timer t;
    std::string d;
    bool ok = criterion_synthetic(&d);
    ok = ok && t.s() < 300.0;
    verdict(6, ok, t.s(), d);
  }
  {
    std::string d;
    bool ok = criterion_desk(pool, &d);
    ok = ok && pool_secs < 7200.0;
    verdict(7, ok, pool_secs, d);
  }
  {
    Timer t;
    std::string d;
    bool ok = criterion_adaptive(pool, desk_test, &d);
    verdict(8, ok, t.s(), d);
  }
  {
    Timer t;
    std::string d;
    bool ok = criterion_checklist(pool, desk_test, &d);
    verdict(9, ok, t.s(), d);
  }
  {
    Timer t;
    std::string d;
    bool ok = criterion_sqrt(pool, &d);
    verdict(10, ok, t.s(), d);
  }

  std::printf("acceptance gate: %s\n", g_all_pass ? "ALL CRITERIA PASS" : "FAILURES PRESENT");
  return g_all_pass ? 0 : 1;
}
