#include "cadv/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "cadv/objectives.hpp"
#include "cadv/rng.hpp"

namespace cadv {

double plugin_mi(const std::vector<int64_t>& a, const std::vector<int64_t>& b, int64_t ka,
                 int64_t kb) {
  CADV_CHECK(a.size() == b.size() && !a.empty(), "plugin_mi needs paired non-empty samples");
  CADV_CHECK(ka >= 1 && kb >= 1, "alphabet sizes must be positive");
  std::vector<double> joint(size_t(ka * kb), 0.0), pa(size_t(ka), 0.0), pb(size_t(kb), 0.0);
  const double n = double(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CADV_CHECK(a[i] >= 0 && a[i] < ka, "value ", a[i], " outside [0, ", ka, ")");
    CADV_CHECK(b[i] >= 0 && b[i] < kb, "value ", b[i], " outside [0, ", kb, ")");
    joint[size_t(a[i] * kb + b[i])] += 1.0 / n;
    pa[size_t(a[i])] += 1.0 / n;
    pb[size_t(b[i])] += 1.0 / n;
  }
  double mi = 0.0;
  for (int64_t i = 0; i < ka; ++i)
    for (int64_t j = 0; j < kb; ++j) {
      const double p = joint[size_t(i * kb + j)];
      if (p > 0.0) mi += p * std::log(p / (pa[size_t(i)] * pb[size_t(j)]));
    }
  return std::max(0.0, mi);
}

LinearProbe train_linear_probe(const Tensor<double>& x, const std::vector<int64_t>& y, int64_t k,
                               int64_t iters, double lr, uint64_t seed) {
  CADV_CHECK(x.ndim() == 2, "probe features must be rank 2, got ", shape_str(x.shape()));
  CADV_CHECK(x.dim(0) == int64_t(y.size()), "feature/label count mismatch");
  CADV_CHECK(k >= 2 && iters >= 1 && lr > 0.0, "bad probe hyperparameters");
  const int64_t d = x.dim(1);

  LinearProbe probe;
  probe.k = k;
  Rng rng(seed);
  std::vector<double> w0(size_t(k * d));
  for (double& v : w0) v = 0.01 * rng.normal();
  probe.W = Tensor<double>::from({k, d}, std::move(w0), true);
  probe.b = Tensor<double>({k}, 0.0, true);

  for (int64_t it = 0; it < iters; ++it) {
    Tape<double> tape;
    Tensor<double> logits = tape.add(tape.matmul(x, probe.W, false, true), probe.b);
    Tensor<double> loss = ce_mean(tape, logits, y);
    probe.W.zero_grad();
    probe.b.zero_grad();
    tape.backward(loss);
    for (size_t i = 0; i < probe.W.data().size(); ++i)
      probe.W.data()[i] -= lr * probe.W.grad()[i];
    for (size_t i = 0; i < probe.b.data().size(); ++i)
      probe.b.data()[i] -= lr * probe.b.grad()[i];
  }
  return probe;
}

double probe_accuracy(const LinearProbe& probe, const Tensor<double>& x,
                      const std::vector<int64_t>& y) {
  CADV_CHECK(x.ndim() == 2 && x.dim(1) == probe.W.dim(1), "feature width mismatch");
  CADV_CHECK(x.dim(0) == int64_t(y.size()) && !y.empty(), "feature/label count mismatch");
  Tape<double> tape;
  Tensor<double> logits = tape.add(tape.matmul(x, probe.W, false, true), probe.b);
  return double(count_correct(logits, y)) / double(y.size());
}

std::vector<StyleGapRow> conditional_association_gap(const Classifier<double>& model,
                                                     const Dataset& ds, const AttackConfig& att,
                                                     int64_t batch_size) {
  CADV_CHECK(!ds.style.empty(), "dataset lacks style labels");
  CADV_CHECK(batch_size >= 1, "batch size must be positive");
  ds.validate();

  const int64_t buckets = 1 + *std::max_element(ds.style.begin(), ds.style.end());
  std::vector<StyleGapRow> rows(static_cast<size_t>(buckets));
  for (int64_t s = 0; s < buckets; ++s) rows[size_t(s)].style = s;

  const bool flat = model.spec.arch == Arch::mlp;
  for (int64_t lo = 0; lo < ds.size(); lo += batch_size) {
    const int64_t hi = std::min(ds.size(), lo + batch_size);
    std::vector<int64_t> idx(size_t(hi - lo));
    for (int64_t i = lo; i < hi; ++i) idx[size_t(i - lo)] = i;
    Tensor<double> x = batch_x<double>(ds, idx, flat);
    const std::vector<int64_t> y = batch_y(ds, idx);

    AdversarialBatch<double> adv = pgd(model, x, y, att);
    Tape<double> tape(GradScope::watched);  // nothing watched: evaluation only
    Tensor<double> natp = tape.log_softmax(forward(tape, model, x).logits);
    Tensor<double> advp = tape.log_softmax(forward(tape, model, adv.x_adv).logits);
    const std::vector<double>& nat_lp = natp.data();
    const std::vector<double>& adv_lp = advp.data();

    const int64_t k = model.spec.k;
    for (size_t i = 0; i < idx.size(); ++i) {
      StyleGapRow& row = rows[size_t(ds.style[size_t(idx[i])])];
      row.count += 1;
      row.nat_ce -= nat_lp[i * size_t(k) + size_t(y[i])];
      row.adv_ce -= adv_lp[i * size_t(k) + size_t(y[i])];
    }
  }
  for (StyleGapRow& row : rows) {
    if (row.count > 0) {
      row.nat_ce /= double(row.count);
      row.adv_ce /= double(row.count);
    }
  }
  return rows;
}

}  // namespace cadv
