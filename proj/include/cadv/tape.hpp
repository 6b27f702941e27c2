#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cadv/tensor.hpp"

namespace cadv {

// Which leaves receive gradients. `all` is the training mode: every tensor
// created with requires_grad participates. `watched` is the attack mode:
// only explicitly watched leaves (the inputs under attack) receive
// gradients, so frozen model parameters are never touched — this is what
// lets attacks on disjoint batches run concurrently against one model.
enum class GradScope { all, watched };

// Reverse-mode tape. Nodes are recorded in forward order; backward walks
// them once in reverse. Single-threaded by design: one tape per thread.
template <class Real>
class Tape {
 public:
  explicit Tape(GradScope scope = GradScope::all) : scope_(scope) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void watch(const Tensor<Real>& t);
  bool needs_grad(const Tensor<Real>& t) const;

  // When off (default), backward overwrites leaf grads with exact d(loss)/d(leaf).
  // When on, contributions add to whatever the leaf grads already hold.
  void set_accumulate(bool on) { accumulate_ = on; }

  // ---- primitive ops ----------------------------------------------------
  Tensor<Real> add(Tensor<Real> a, Tensor<Real> b);  // equal shape, or b = last-dim row vector
  Tensor<Real> sub(Tensor<Real> a, Tensor<Real> b);
  Tensor<Real> mul(Tensor<Real> a, Tensor<Real> b);
  Tensor<Real> scalar_mul(Tensor<Real> a, Real c);
  Tensor<Real> matmul(Tensor<Real> a, Tensor<Real> b, bool trans_a = false,
                      bool trans_b = false);
  // x: B x Cin x H x W, w: Cout x Cin x kh x kw, optional bias (Cout), stride 1,
  // zero padding `pad` on all sides. Pass a default-constructed Tensor for no bias.
  Tensor<Real> conv2d(Tensor<Real> x, Tensor<Real> w, Tensor<Real> bias,
                      int pad = 0);
  Tensor<Real> maxpool2x2(Tensor<Real> x);  // H, W even; ties -> first in scan order
  Tensor<Real> relu(Tensor<Real> x);
  Tensor<Real> reshape(Tensor<Real> x, Shape shape);
  Tensor<Real> flatten(Tensor<Real> x);  // [B, ...] -> [B, rest]
  Tensor<Real> log_softmax(Tensor<Real> x);  // rows of B x k
  // out[b] = x[b, idx[b]]; idx is a plain index list, not differentiable
  Tensor<Real> gather(Tensor<Real> x, const std::vector<int64_t>& idx);
  Tensor<Real> sum(Tensor<Real> x);   // scalar
  Tensor<Real> mean(Tensor<Real> x);  // scalar
  Tensor<Real> exp(Tensor<Real> x);
  // Guarded square root: backward uses 0.5/sqrt(max(x, 1e-12)) so losses that
  // touch zero stay finite. Forward requires x >= 0.
  Tensor<Real> sqrt(Tensor<Real> x);
  // clamp and sign are recorded as zero-gradient nodes: attacks never
  // differentiate through their own projection/update step.
  Tensor<Real> clamp(Tensor<Real> x, Real lo, Real hi);
  Tensor<Real> sign(Tensor<Real> x);

  // ---- fused/custom ops --------------------------------------------------
  // Registers a caller-computed output with a caller-built backward closure.
  // The closure must read out.grad() and accumulate (+=) into the grads of
  // exactly those inputs for which needs_grad(input) held at build time.
  Tensor<Real> custom(const char* kind, std::vector<Tensor<Real>> inputs, Tensor<Real> out,
                      std::function<void()> back);

  // ---- driver -------------------------------------------------------------
  // loss must be scalar. One backward per recorded forward; reset() rearms.
  void backward(const Tensor<Real>& loss);
  void reset();
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* kind;
    std::vector<Tensor<Real>> inputs;
    Tensor<Real> out;
    std::function<void()> back;
  };

  Tensor<Real> make_out(Shape shape, std::vector<Real> values, const char* kind);
  void push(const char* kind, std::vector<Tensor<Real>> inputs, const Tensor<Real>& out,
            std::function<void()> back);

  GradScope scope_;
  bool accumulate_ = false;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const TensorData<Real>*, bool> needs_;      // resolved per tensor
  std::unordered_map<const TensorData<Real>*, bool> produced_;   // outputs of this tape
};

}  // namespace cadv
