#pragma once

#include <vector>

#include "cadv/model.hpp"
#include "cadv/objectives.hpp"

namespace cadv {

struct AttackConfig {
  double epsilon = 0.3;     // l-inf radius in input units
  double step_size = 0.01;  // eta
  int64_t iterations = 1;   // K
  bool random_start = false;
  enum class Loss { ce, kl_to_natural, cw_margin, adaptive_full };
  Loss loss_kind = Loss::ce;
  double kappa = 0.0;  // C&W confidence
  double clamp_lo = 0.0, clamp_hi = 1.0;
  uint64_t seed = 0;

  void validate() const;
};

const char* attack_loss_name(AttackConfig::Loss l);
AttackConfig::Loss attack_loss_from_name(const std::string& name);

// x_adv == x + delta bitwise; |delta| <= epsilon and x_adv inside the clamp
// range, enforced elementwise after every step. loss_trace holds K+1 values:
// the loss before each of the K steps, then the loss at the final point.
template <class Real>
struct AdversarialBatch {
  Tensor<Real> x_adv;
  Tensor<Real> delta;
  std::vector<double> loss_trace;
};

// Single signed-gradient step of the batch-mean CE: identical to
// pgd(K=1, eta=epsilon, no random start).
template <class Real>
AdversarialBatch<Real> fgsm(const Classifier<Real>& model, Tensor<Real> x,
                            const std::vector<int64_t>& y, double epsilon);

template <class Real>
AdversarialBatch<Real> pgd(const Classifier<Real>& model, Tensor<Real> x,
                           const std::vector<int64_t>& y, const AttackConfig& cfg);

// PGD ascending the full training objective at x_adv; the natural-anchored
// terms are evaluated once at x and enter as constants.
template <class Real>
AdversarialBatch<Real> adaptive_pgd(const Classifier<Real>& model, Tensor<Real> x,
                                    const std::vector<int64_t>& y, const AttackConfig& cfg,
                                    const ObjectiveSpec& objective);

// Batch sum of per-sample margins min(max_{j != y} z_j - z_y, kappa):
// ascent stalls once the rival beats the label by kappa (the C&W
// confidence), so kappa = 0 pushes each sample just past the boundary.
// Ties inside the inner max break toward the first index; a tie at the
// kappa cap propagates gradient through the margin branch.
template <class Real>
Tensor<Real> cw_margin_loss(Tape<Real>& tape, Tensor<Real> logits,
                            const std::vector<int64_t>& y, Real kappa);

// Craft on the surrogate, score on the target; returns target accuracy in [0,1].
template <class Real>
double transfer_attack(const Classifier<Real>& surrogate, const Classifier<Real>& target, Tensor<Real> x,
                       const std::vector<int64_t>& y, const AttackConfig& cfg);

}  // namespace cadv
