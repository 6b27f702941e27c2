#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "cadv/common.hpp"

namespace cadv {

template <class Real>
struct TensorData {
  Shape shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // empty until first needed; same length as values after
  bool requires_grad = false;
};

// Shared handle over dense storage. Values are treated as immutable while a
// tape that recorded them is still alive; the grad slot is written only by
// the owning tape's backward pass (or zero_grad between steps).
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0), bool requires_grad = false)
      : d_(std::make_shared<TensorData<Real>>()) {
    d_->shape = std::move(shape);
    int64_t n = cadv::numel(d_->shape);
    CADV_CHECK(n >= 0, "tensor: negative element count");
    d_->values.assign(static_cast<size_t>(n), fill);
    d_->requires_grad = requires_grad;
  }

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<Real>>();
    int64_t n = cadv::numel(shape);
    CADV_CHECK(static_cast<size_t>(n) == values.size(), "tensor: ", values.size(),
               " values for shape ", shape_str(shape));
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(Real v) { return from({}, {v}); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int ndim() const { return static_cast<int>(d_->shape.size()); }
  int64_t dim(int i) const { return d_->shape.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }

  std::vector<Real>& data() { return d_->values; }
  const std::vector<Real>& data() const { return d_->values; }
  Real* ptr() { return d_->values.data(); }
  const Real* ptr() const { return d_->values.data(); }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<Real>& grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), Real(0));
    return d_->grad;
  }
  const std::vector<Real>& grad() const { return d_->grad; }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), Real(0));
  }

  Real item() const {
    CADV_CHECK(numel() == 1, "item() on tensor of shape ", shape_str(d_->shape));
    return d_->values[0];
  }
  Real at(int64_t i) const { return d_->values.at(static_cast<size_t>(i)); }

  // Deep copy of values only: a fresh leaf, no grad, requires_grad off.
  Tensor clone() const {
    Tensor t;
    t.d_ = std::make_shared<TensorData<Real>>();
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    return t;
  }

  TensorData<Real>* raw() const { return d_.get(); }

  bool all_finite() const {
    for (Real v : d_->values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  std::shared_ptr<TensorData<Real>> d_;
};

}  // namespace cadv
