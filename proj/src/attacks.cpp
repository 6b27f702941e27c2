#include "cadv/attacks.hpp"

#include <cmath>
#include <functional>

#include "cadv/rng.hpp"

namespace cadv {

void AttackConfig::validate() const {
  CADV_CHECK(epsilon >= 0, "attack: epsilon must be >= 0, got ", epsilon);
  CADV_CHECK(step_size >= 0, "attack: step_size must be >= 0, got ", step_size);
  CADV_CHECK(iterations >= 1, "attack: iterations must be >= 1, got ", iterations);
  CADV_CHECK(kappa >= 0, "attack: kappa must be >= 0, got ", kappa);
  CADV_CHECK(clamp_lo < clamp_hi, "attack: clamp range [", clamp_lo, ", ", clamp_hi, "]");
}

const char* attack_loss_name(AttackConfig::Loss l) {
  switch (l) {
    case AttackConfig::Loss::ce: return "ce";
    case AttackConfig::Loss::kl_to_natural: return "kl_to_natural";
    case AttackConfig::Loss::cw_margin: return "cw_margin";
    case AttackConfig::Loss::adaptive_full: return "adaptive_full";
  }
  fail("attack_loss_name: bad enum value");
}

AttackConfig::Loss attack_loss_from_name(const std::string& name) {
  for (auto l : {AttackConfig::Loss::ce, AttackConfig::Loss::kl_to_natural,
                 AttackConfig::Loss::cw_margin, AttackConfig::Loss::adaptive_full})
    if (name == attack_loss_name(l)) return l;
  fail("unknown attack loss '", name, "' (expected ce|kl_to_natural|cw_margin|adaptive_full)");
}

template <class Real>
Tensor<Real> cw_margin_loss(Tape<Real>& tape, Tensor<Real> logits,
                            const std::vector<int64_t>& y, Real kappa) {
  CADV_CHECK(logits.ndim() == 2, "cw_margin_loss: logits must be B x k");
  const int64_t B = logits.dim(0), k = logits.dim(1);
  CADV_CHECK(k >= 2, "cw_margin_loss: need k >= 2, got ", k);
  CADV_CHECK(static_cast<int64_t>(y.size()) == B, "cw_margin_loss: label count");
  CADV_CHECK(kappa >= Real(0), "cw_margin_loss: kappa must be >= 0");

  std::vector<Real> vals(static_cast<size_t>(B));
  auto rival = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    CADV_CHECK(y[b] >= 0 && y[b] < k, "cw_margin_loss: label ", y[b], " out of range");
    int64_t best = -1;
    for (int64_t j = 0; j < k; ++j) {
      if (j == y[b]) continue;
      if (best < 0 || logits.at(b * k + j) > logits.at(b * k + best)) best = j;
    }
    (*rival)[static_cast<size_t>(b)] = best;
    const Real m = logits.at(b * k + best) - logits.at(b * k + y[b]);
    vals[static_cast<size_t>(b)] = m <= kappa ? m : kappa;
  }
  Tensor<Real> margins = Tensor<Real>::from({B}, std::move(vals));
  const bool ng = tape.needs_grad(logits);
  auto yy = std::make_shared<std::vector<int64_t>>(y);
  auto back = [logits, margins, rival, yy, kappa, B, k, ng]() mutable {
    if (!ng) return;
    auto& gl = logits.grad();
    const auto& g = margins.grad();
    for (int64_t b = 0; b < B; ++b) {
      const int64_t j = (*rival)[static_cast<size_t>(b)], yb = (*yy)[b];
      const Real m = logits.at(b * k + j) - logits.at(b * k + yb);
      if (m > kappa) continue;  // capped: flat in the logits
      gl[b * k + j] += g[b];
      gl[b * k + yb] -= g[b];
    }
  };
  Tensor<Real> per = tape.custom("cw_margin", {logits}, margins, std::move(back));
  return tape.sum(per);
}

namespace {

template <class Real>
using LossBuilder = std::function<Tensor<Real>(Tape<Real>&, Tensor<Real>)>;

// Natural-anchor values shared by the kl_to_natural and adaptive_full losses.
template <class Real>
struct NatAnchor {
  Tensor<Real> logp;   // B x k natural log-softmax, constant
  Tensor<Real> p;      // B x k natural probabilities, constant
  double ce = 0;       // batch-mean natural CE
  double style = 0;    // batch-mean natural style bound
};

template <class Real>
NatAnchor<Real> natural_anchor(const Classifier<Real>& model, Tensor<Real> x,
                               const std::vector<int64_t>& y, bool with_style) {
  Tape<Real> side(GradScope::watched);
  ForwardOut<Real> fw = forward(side, model, x);
  NatAnchor<Real> a;
  Tensor<Real> lp = side.log_softmax(fw.logits);
  a.logp = Tensor<Real>::from(lp.shape(), lp.data());
  a.p = Tensor<Real>::from(lp.shape(), side.exp(lp).data());
  a.ce = double(ce_mean(side, fw.logits, y).item());
  if (with_style)
    a.style = double(
        side.mean(style_bound_ce(side, style_mu(side, model, fw.R), model.Wg, y, model.sigma))
            .item());
  return a;
}

template <class Real>
LossBuilder<Real> make_loss_builder(const Classifier<Real>& model, Tensor<Real> x,
                                    const std::vector<int64_t>& y, const AttackConfig& cfg,
                                    const ObjectiveSpec* objective) {
  const int64_t B = x.dim(0);
  switch (cfg.loss_kind) {
    case AttackConfig::Loss::ce:
      return [&model, y](Tape<Real>& tape, Tensor<Real> xa) {
        return ce_mean(tape, forward(tape, model, xa).logits, y);
      };
    case AttackConfig::Loss::cw_margin:
      return [&model, y, kap = Real(cfg.kappa), B](Tape<Real>& tape, Tensor<Real> xa) {
        Tensor<Real> s = cw_margin_loss(tape, forward(tape, model, xa).logits, y, kap);
        return tape.scalar_mul(s, Real(1) / Real(B));
      };
    case AttackConfig::Loss::kl_to_natural: {
      NatAnchor<Real> a = natural_anchor(model, x, y, false);
      // KL(h(x_adv) || h(x)) with the natural distribution frozen
      return [&model, a, B](Tape<Real>& tape, Tensor<Real> xa) {
        Tensor<Real> lpa = tape.log_softmax(forward(tape, model, xa).logits);
        Tensor<Real> term = tape.mul(tape.exp(lpa), tape.sub(lpa, a.logp));
        return tape.scalar_mul(tape.sum(term), Real(1) / Real(B));
      };
    }
    case AttackConfig::Loss::adaptive_full: {
      CADV_CHECK(objective != nullptr, "pgd: loss_kind adaptive_full requires adaptive_pgd");
      objective->validate();
      const ObjectiveSpec obj = *objective;
      const bool needs_nat = obj.trades_family() || obj.style_enabled() || obj.gamma != 0.0;
      NatAnchor<Real> a;
      if (needs_nat) a = natural_anchor(model, x, y, obj.style_enabled());
      return [&model, y, obj, a, B](Tape<Real>& tape, Tensor<Real> xa) {
        ForwardOut<Real> adv = forward(tape, model, xa);
        Tensor<Real> total;
        if (obj.trades_family()) {
          // trades_beta * KL(h(x) || h(x_adv)), natural side constant
          Tensor<Real> lpa = tape.log_softmax(adv.logits);
          Tensor<Real> term = tape.mul(a.p, tape.sub(a.logp, lpa));
          total = tape.scalar_mul(tape.sum(term), Real(obj.trades_beta) / Real(B));
        } else {
          total = ce_mean(tape, adv.logits, y);
        }
        const double gamma_eff = obj.trades_family() ? 1.0 : obj.gamma;
        double constant = gamma_eff * a.ce;
        if (obj.style_enabled()) {
          Tensor<Real> sa = tape.mean(
              style_bound_ce(tape, style_mu(tape, model, adv.R), model.Wg, y, model.sigma));
          if (obj.sqrt_style()) sa = tape.sqrt(tape.scalar_mul(sa, Real(0.5)));
          total = tape.add(total, tape.scalar_mul(sa, Real(obj.lambda)));
          const double sn = obj.sqrt_style() ? std::sqrt(a.style / 2.0) : a.style;
          constant += obj.lambda * obj.beta * sn;
        }
        if (constant != 0.0)
          total = tape.add(total, Tensor<Real>::scalar(Real(constant)));
        return total;
      };
    }
  }
  fail("pgd: bad loss kind");
}

template <class Real>
AdversarialBatch<Real> pgd_impl(Tensor<Real> x, const AttackConfig& cfg,
                                const LossBuilder<Real>& loss_of) {
  cfg.validate();
  const int64_t n = x.numel();
  const double eps_d = cfg.epsilon, lo_d = cfg.clamp_lo, hi_d = cfg.clamp_hi;
  // Largest Real-typed radius not exceeding the double epsilon, so the ball
  // constraint measured in double never overshoots (float(0.3) > 0.3).
  Real eps = Real(cfg.epsilon);
  while (double(eps) > eps_d) eps = std::nextafter(eps, Real(0));
  const Real lo = Real(cfg.clamp_lo), hi = Real(cfg.clamp_hi);
  for (int64_t i = 0; i < n; ++i)
    CADV_CHECK(double(x.at(i)) >= lo_d && double(x.at(i)) <= hi_d,
               "attack: input outside clamp range at ", i);

  // delta is the source of truth; xa = x + delta is re-materialized after
  // every change so that x_adv == x + delta holds bitwise at the end.
  // Constraints are verified in double against the config values; the ulp
  // repair loop terminates because delta = 0 is always feasible.
  std::vector<Real> delta(static_cast<size_t>(n), Real(0));
  std::vector<Real> xa(static_cast<size_t>(n));
  auto feasibilize = [&]() {
    for (int64_t i = 0; i < n; ++i) {
      Real d = delta[i];
      if (d > eps) d = eps;
      if (d < -eps) d = -eps;
      const Real xi = x.at(i);
      Real v = xi + d;
      if (v > hi) { d = hi - xi; v = xi + d; }
      if (v < lo) { d = lo - xi; v = xi + d; }
      while (double(v) < lo_d || double(v) > hi_d ||
             std::abs(double(v) - double(xi)) > eps_d) {
        d = std::nextafter(d, Real(0));
        v = xi + d;
      }
      delta[i] = d;
      xa[i] = v;
    }
  };
  if (cfg.random_start && cfg.epsilon > 0) {
    Rng rng(cfg.seed);
    for (auto& d : delta) d = Real(rng.uniform(-cfg.epsilon, cfg.epsilon));
  }
  feasibilize();

  AdversarialBatch<Real> out;
  out.loss_trace.reserve(static_cast<size_t>(cfg.iterations) + 1);
  const Real eta = Real(cfg.step_size);
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    Tape<Real> tape(GradScope::watched);
    Tensor<Real> xt = Tensor<Real>::from(x.shape(), xa, true);
    tape.watch(xt);
    Tensor<Real> loss = loss_of(tape, xt);
    out.loss_trace.push_back(double(loss.item()));
    tape.backward(loss);
    const auto& g = xt.grad();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(double(g[i])))
        throw NumericError("attack: non-finite input gradient");
      const Real s = g[i] > Real(0) ? Real(1) : (g[i] < Real(0) ? Real(-1) : Real(0));
      delta[static_cast<size_t>(i)] += eta * s;
    }
    feasibilize();
  }
  {
    Tape<Real> tape(GradScope::watched);
    Tensor<Real> xt = Tensor<Real>::from(x.shape(), xa);
    out.loss_trace.push_back(double(loss_of(tape, xt).item()));
  }
  out.x_adv = Tensor<Real>::from(x.shape(), std::move(xa));
  out.delta = Tensor<Real>::from(x.shape(), std::move(delta));
  return out;
}

}  // namespace

template <class Real>
AdversarialBatch<Real> pgd(const Classifier<Real>& model, Tensor<Real> x,
                           const std::vector<int64_t>& y, const AttackConfig& cfg) {
  CADV_CHECK(x.dim(0) == static_cast<int64_t>(y.size()), "pgd: batch ", x.dim(0), " labels ",
             y.size());
  return pgd_impl(x, cfg, make_loss_builder(model, x, y, cfg, nullptr));
}

template <class Real>
AdversarialBatch<Real> fgsm(const Classifier<Real>& model, Tensor<Real> x,
                            const std::vector<int64_t>& y, double epsilon) {
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.step_size = epsilon;
  cfg.iterations = 1;
  cfg.random_start = false;
  cfg.loss_kind = AttackConfig::Loss::ce;
  return pgd(model, x, y, cfg);
}

template <class Real>
AdversarialBatch<Real> adaptive_pgd(const Classifier<Real>& model, Tensor<Real> x,
                                    const std::vector<int64_t>& y, const AttackConfig& cfg,
                                    const ObjectiveSpec& objective) {
  CADV_CHECK(x.dim(0) == static_cast<int64_t>(y.size()), "adaptive_pgd: batch ", x.dim(0),
             " labels ", y.size());
  AttackConfig c = cfg;
  c.loss_kind = AttackConfig::Loss::adaptive_full;
  return pgd_impl(x, c, make_loss_builder(model, x, y, c, &objective));
}

template <class Real>
double transfer_attack(const Classifier<Real>& surrogate, const Classifier<Real>& target, Tensor<Real> x,
                       const std::vector<int64_t>& y, const AttackConfig& cfg) {
  AdversarialBatch<Real> adv = pgd(surrogate, x, y, cfg);
  Tape<Real> side(GradScope::watched);
  ForwardOut<Real> fw = forward(side, target, adv.x_adv);
  return double(count_correct(fw.logits, y)) / double(y.size());
}

template Tensor<float> cw_margin_loss<float>(Tape<float>&, Tensor<float>,
                                             const std::vector<int64_t>&, float);
template Tensor<double> cw_margin_loss<double>(Tape<double>&, Tensor<double>,
                                               const std::vector<int64_t>&, double);
template AdversarialBatch<float> fgsm<float>(const Classifier<float>&, Tensor<float>,
                                             const std::vector<int64_t>&, double);
template AdversarialBatch<double> fgsm<double>(const Classifier<double>&, Tensor<double>,
                                               const std::vector<int64_t>&, double);
template AdversarialBatch<float> pgd<float>(const Classifier<float>&, Tensor<float>,
                                            const std::vector<int64_t>&, const AttackConfig&);
template AdversarialBatch<double> pgd<double>(const Classifier<double>&, Tensor<double>,
                                              const std::vector<int64_t>&, const AttackConfig&);
template AdversarialBatch<float> adaptive_pgd<float>(const Classifier<float>&, Tensor<float>,
                                                     const std::vector<int64_t>&,
                                                     const AttackConfig&, const ObjectiveSpec&);
template AdversarialBatch<double> adaptive_pgd<double>(const Classifier<double>&, Tensor<double>,
                                                       const std::vector<int64_t>&,
                                                       const AttackConfig&,
                                                       const ObjectiveSpec&);
template double transfer_attack<float>(const Classifier<float>&, const Classifier<float>&, Tensor<float>,
                                       const std::vector<int64_t>&, const AttackConfig&);
template double transfer_attack<double>(const Classifier<double>&, const Classifier<double>&,
                                        Tensor<double>, const std::vector<int64_t>&,
                                        const AttackConfig&);

}  // namespace cadv
