#pragma once

#include <vector>

#include "cadv/attacks.hpp"
#include "cadv/data.hpp"

namespace cadv {

// Plug-in mutual information (nats) between paired discrete variables with
// alphabets [0, ka) and [0, kb).
double plugin_mi(const std::vector<int64_t>& a, const std::vector<int64_t>& b, int64_t ka,
                 int64_t kb);

// Multinomial logistic probe trained by full-batch gradient descent; used to
// measure how linearly decodable a label is from a feature block.
struct LinearProbe {
  Tensor<double> W;  // k x d
  Tensor<double> b;  // k
  int64_t k = 0;
};

LinearProbe train_linear_probe(const Tensor<double>& x, const std::vector<int64_t>& y, int64_t k,
                               int64_t iters, double lr, uint64_t seed);
double probe_accuracy(const LinearProbe& probe, const Tensor<double>& x,
                      const std::vector<int64_t>& y);

// Natural and adversarial cross-entropy conditioned on the ground-truth style
// bucket. gap() > 0 means the attack hurts that bucket's predictions.
struct StyleGapRow {
  int64_t style = 0;
  int64_t count = 0;
  double nat_ce = 0.0;
  double adv_ce = 0.0;
  double gap() const { return adv_ce - nat_ce; }
};

std::vector<StyleGapRow> conditional_association_gap(const Classifier<double>& model,
                                                     const Dataset& ds, const AttackConfig& att,
                                                     int64_t batch_size = 256);

}  // namespace cadv
