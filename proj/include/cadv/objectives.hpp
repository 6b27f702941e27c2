#pragma once

#include <string>
#include <vector>

#include "cadv/model.hpp"
#include "cadv/tape.hpp"

namespace cadv {

enum class Variant {
  madry,
  trades,
  causaladv_m,
  causaladv_t,
  causaladv_m_sqrt,
  causaladv_t_sqrt,
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Weights of the composite training loss
//   total = adv_term + gamma_eff * nat_ce + lambda * (style_adv + beta * style_nat)
// where adv_term is CE(h(x_adv), y) for the madry family and
// trades_beta * KL(h(x) || h(x_adv)) for the trades family. The trades family
// always carries the natural CE (gamma_eff = 1, gamma unused); the sqrt
// variants replace each batch-mean style term t with sqrt(t / 2).
struct ObjectiveSpec {
  Variant variant = Variant::causaladv_m;
  double gamma = 0.0;
  double lambda = 1.0;
  double beta = 1.0;
  double trades_beta = 6.0;

  static ObjectiveSpec defaults(Variant v);

  bool trades_family() const;
  bool sqrt_style() const;
  bool causaladv_family() const;
  bool style_enabled() const { return causaladv_family() && lambda > 0.0; }
  void validate() const;
};

// total stays on the tape for backward; the parts are plain numbers, stored
// exactly as they enter total (adv_ce includes the trades_beta factor, the
// style terms are post-sqrt for sqrt variants but exclude lambda/beta).
template <class Real>
struct LossBreakdown {
  Tensor<Real> total;
  double adv_ce = 0.0;
  double nat_ce = 0.0;
  double style_adv = 0.0;
  double style_nat = 0.0;
};

// Batch-mean cross entropy from logits.
template <class Real>
Tensor<Real> ce_mean(Tape<Real>& tape, Tensor<Real> logits, const std::vector<int64_t>& y);

// Batch-mean KL(softmax(p_logits) || softmax(q_logits)), log-space.
template <class Real>
Tensor<Real> kl_divergence(Tape<Real>& tape, Tensor<Real> p_logits, Tensor<Real> q_logits);

template <class Real>
LossBreakdown<Real> causaladv_objective(Tape<Real>& tape, const Classifier<Real>& model,
                                        Tensor<Real> x, Tensor<Real> x_adv,
                                        const std::vector<int64_t>& y,
                                        const ObjectiveSpec& spec);

// Row-argmax prediction accuracy helpers (first max wins on ties).
template <class Real>
int64_t count_correct(const Tensor<Real>& logits, const std::vector<int64_t>& y);

}  // namespace cadv
