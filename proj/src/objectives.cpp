#include "cadv/objectives.hpp"

namespace cadv {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::madry: return "madry";
    case Variant::trades: return "trades";
    case Variant::causaladv_m: return "causaladv_m";
    case Variant::causaladv_t: return "causaladv_t";
    case Variant::causaladv_m_sqrt: return "causaladv_m_sqrt";
    case Variant::causaladv_t_sqrt: return "causaladv_t_sqrt";
  }
  fail("variant_name: bad enum value");
}

Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::madry, Variant::trades, Variant::causaladv_m,
                    Variant::causaladv_t, Variant::causaladv_m_sqrt, Variant::causaladv_t_sqrt})
    if (name == variant_name(v)) return v;
  fail("unknown variant '", name,
       "' (expected madry|trades|causaladv_m|causaladv_t|causaladv_m_sqrt|causaladv_t_sqrt)");
}

ObjectiveSpec ObjectiveSpec::defaults(Variant v) {
  ObjectiveSpec s;
  s.variant = v;
  switch (v) {
    case Variant::madry:
      s.gamma = 0.0;
      s.lambda = 0.0;
      break;
    case Variant::trades:
      s.lambda = 0.0;
      break;
    case Variant::causaladv_m:
    case Variant::causaladv_m_sqrt:
      s.gamma = 0.0;
      s.lambda = 1.0;
      break;
    case Variant::causaladv_t:
    case Variant::causaladv_t_sqrt:
      s.lambda = 0.5;
      break;
  }
  return s;
}

bool ObjectiveSpec::trades_family() const {
  return variant == Variant::trades || variant == Variant::causaladv_t ||
         variant == Variant::causaladv_t_sqrt;
}

bool ObjectiveSpec::sqrt_style() const {
  return variant == Variant::causaladv_m_sqrt || variant == Variant::causaladv_t_sqrt;
}

bool ObjectiveSpec::causaladv_family() const {
  return variant != Variant::madry && variant != Variant::trades;
}

void ObjectiveSpec::validate() const {
  CADV_CHECK(gamma >= 0 && lambda >= 0 && beta >= 0, "objective: weights must be >= 0");
  CADV_CHECK(trades_beta > 0, "objective: trades_beta must be > 0, got ", trades_beta);
  if (variant == Variant::causaladv_m || variant == Variant::causaladv_m_sqrt)
    CADV_CHECK(gamma == 0.0, "objective: ", variant_name(variant), " requires gamma = 0, got ",
               gamma);
  if (variant == Variant::madry || variant == Variant::trades)
    CADV_CHECK(lambda == 0.0, "objective: ", variant_name(variant),
               " has no style term; lambda must be 0, got ", lambda);
}

template <class Real>
Tensor<Real> ce_mean(Tape<Real>& tape, Tensor<Real> logits, const std::vector<int64_t>& y) {
  Tensor<Real> lp = tape.log_softmax(logits);
  Tensor<Real> picked = tape.gather(lp, y);
  return tape.scalar_mul(tape.mean(picked), Real(-1));
}

template <class Real>
Tensor<Real> kl_divergence(Tape<Real>& tape, Tensor<Real> p_logits, Tensor<Real> q_logits) {
  CADV_CHECK(p_logits.ndim() == 2 && p_logits.shape() == q_logits.shape(),
             "kl_divergence: shapes ", shape_str(p_logits.shape()), " vs ",
             shape_str(q_logits.shape()));
  const int64_t B = p_logits.dim(0);
  Tensor<Real> lp = tape.log_softmax(p_logits);
  Tensor<Real> lq = tape.log_softmax(q_logits);
  Tensor<Real> term = tape.mul(tape.exp(lp), tape.sub(lp, lq));
  return tape.scalar_mul(tape.sum(term), Real(1) / Real(B));
}

template <class Real>
LossBreakdown<Real> causaladv_objective(Tape<Real>& tape, const Classifier<Real>& model,
                                        Tensor<Real> x, Tensor<Real> x_adv,
                                        const std::vector<int64_t>& y,
                                        const ObjectiveSpec& spec) {
  spec.validate();
  CADV_CHECK(x.shape() == x_adv.shape(), "objective: x ", shape_str(x.shape()), " vs x_adv ",
             shape_str(x_adv.shape()));
  CADV_CHECK(x.dim(0) == static_cast<int64_t>(y.size()), "objective: batch ", x.dim(0),
             " labels ", y.size());

  const double gamma_eff = spec.trades_family() ? 1.0 : spec.gamma;
  const bool nat_on_tape = gamma_eff != 0.0 || spec.style_enabled() || spec.trades_family();

  ForwardOut<Real> adv = forward(tape, model, x_adv);
  LossBreakdown<Real> out;

  ForwardOut<Real> nat;
  if (nat_on_tape) {
    nat = forward(tape, model, x);
  } else {
    // Only reported, never differentiated: keep it off the training graph.
    Tape<Real> side(GradScope::watched);
    ForwardOut<Real> n = forward(side, model, x);
    out.nat_ce = double(ce_mean(side, n.logits, y).item());
  }

  Tensor<Real> adv_term;
  if (spec.trades_family())
    adv_term = tape.scalar_mul(kl_divergence(tape, nat.logits, adv.logits),
                               Real(spec.trades_beta));
  else
    adv_term = ce_mean(tape, adv.logits, y);
  out.adv_ce = double(adv_term.item());

  Tensor<Real> total = adv_term;
  if (nat_on_tape) {
    Tensor<Real> nat_ce_t = ce_mean(tape, nat.logits, y);
    out.nat_ce = double(nat_ce_t.item());
    if (gamma_eff != 0.0)
      total = tape.add(total, tape.scalar_mul(nat_ce_t, Real(gamma_eff)));
  }

  if (spec.style_enabled()) {
    Tensor<Real> sa = tape.mean(
        style_bound_ce(tape, style_mu(tape, model, adv.R), model.Wg, y, model.sigma));
    Tensor<Real> sn = tape.mean(
        style_bound_ce(tape, style_mu(tape, model, nat.R), model.Wg, y, model.sigma));
    if (spec.sqrt_style()) {
      sa = tape.sqrt(tape.scalar_mul(sa, Real(0.5)));
      sn = tape.sqrt(tape.scalar_mul(sn, Real(0.5)));
    }
    out.style_adv = double(sa.item());
    out.style_nat = double(sn.item());
    Tensor<Real> style = tape.add(sa, tape.scalar_mul(sn, Real(spec.beta)));
    total = tape.add(total, tape.scalar_mul(style, Real(spec.lambda)));
  }

  out.total = total;
  return out;
}

template <class Real>
int64_t count_correct(const Tensor<Real>& logits, const std::vector<int64_t>& y) {
  CADV_CHECK(logits.ndim() == 2, "count_correct: logits must be B x k");
  const int64_t B = logits.dim(0), k = logits.dim(1);
  CADV_CHECK(static_cast<int64_t>(y.size()) == B, "count_correct: label count");
  int64_t correct = 0;
  for (int64_t b = 0; b < B; ++b) {
    int64_t arg = 0;
    for (int64_t j = 1; j < k; ++j)
      if (logits.at(b * k + j) > logits.at(b * k + arg)) arg = j;
    if (arg == y[b]) ++correct;
  }
  return correct;
}

template Tensor<float> ce_mean<float>(Tape<float>&, Tensor<float>, const std::vector<int64_t>&);
template Tensor<double> ce_mean<double>(Tape<double>&, Tensor<double>,
                                        const std::vector<int64_t>&);
template Tensor<float> kl_divergence<float>(Tape<float>&, Tensor<float>, Tensor<float>);
template Tensor<double> kl_divergence<double>(Tape<double>&, Tensor<double>, Tensor<double>);
template LossBreakdown<float> causaladv_objective<float>(Tape<float>&, const Classifier<float>&,
                                                         Tensor<float>, Tensor<float>,
                                                         const std::vector<int64_t>&,
                                                         const ObjectiveSpec&);
template LossBreakdown<double> causaladv_objective<double>(Tape<double>&, const Classifier<double>&,
                                                           Tensor<double>, Tensor<double>,
                                                           const std::vector<int64_t>&,
                                                           const ObjectiveSpec&);
template int64_t count_correct<float>(const Tensor<float>&, const std::vector<int64_t>&);
template int64_t count_correct<double>(const Tensor<double>&, const std::vector<int64_t>&);

}  // namespace cadv
