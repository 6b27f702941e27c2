#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cadv/causal_align.hpp"
#include "cadv/tape.hpp"

namespace cadv {

enum class Arch { mnist_cnn, mlp };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& name);

struct NetworkSpec {
  Arch arch = Arch::mlp;
  // mnist_cnn input geometry
  int64_t in_channels = 1, in_h = 28, in_w = 28;
  // mlp input width; trunk widths, last entry is the representation dim d
  int64_t input_dim = 784;
  std::vector<int64_t> layers = {300, 200};
  int64_t k = 10;
  int64_t d_s = 0;  // 0 -> min(64, d - k)
  double sigma = 1.0;

  int64_t d() const;
  int64_t style_dim() const;
  int64_t flat_input() const;  // total input elements per sample
  void validate() const;
};

// Shared trunk r(.;W_r), linear content head (Wc, bc), derived style map Ws
// (never trained), style classifier Wg, style noise scale sigma, and the
// running covariance estimate feeding the Ws re-projection.
template <class Real>
struct Classifier {
  NetworkSpec spec;

  struct Conv {
    Tensor<Real> W, b;
    bool pool_after = false;
  };
  struct Fc {
    Tensor<Real> W, b;
  };
  std::vector<Conv> convs;  // relu after each
  std::vector<Fc> fcs;      // relu after each; last output is the representation
  Tensor<Real> Wc, bc;      // k x d, k
  Tensor<Real> Wg;          // k x d_s
  Tensor<Real> Ws;          // d_s x d, derived, requires_grad off
  Real sigma = Real(1);
  CovarianceEstimate cov;

  std::vector<Tensor<Real>> parameters() const;  // trainable tensors, fixed order
  std::vector<std::pair<std::string, Tensor<Real>>> named_parameters() const;
};

template <class Real>
Classifier<Real> build_classifier(const NetworkSpec& spec, uint64_t seed);

// Deep copy with fresh parameter storage (checkpointing during training).
template <class Real>
Classifier<Real> clone_classifier(const Classifier<Real>& c);

template <class Real>
struct ForwardOut {
  Tensor<Real> R;       // batch x d
  Tensor<Real> logits;  // batch x k
};

template <class Real>
ForwardOut<Real> forward(Tape<Real>& tape, const Classifier<Real>& c, Tensor<Real> x);

// mu(x) = R Ws^T recorded on the tape; gradient reaches the trunk through R
// but never Ws itself.
template <class Real>
Tensor<Real> style_mu(Tape<Real>& tape, const Classifier<Real>& c, Tensor<Real> R);

// Recompute Ws from the current (Wc, cov). Returns max |Ws M Wc^T|, which
// must come back < 1e-6.
template <class Real>
double reproject_style_map(Classifier<Real>& c);

template <class Real>
void save_classifier(const std::string& path, const Classifier<Real>& c);
template <class Real>
Classifier<Real> load_classifier(const std::string& path);

}  // namespace cadv
