#include "cadv/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cadv/rng.hpp"

namespace cadv {

void RunConfig::validate() const {
  net.validate();
  objective.validate();
  train_attack.validate();
  val_attack.validate();
  for (const auto& [name, att] : eval_attacks) {
    CADV_CHECK(!name.empty(), "eval attack needs a name");
    att.validate();
  }
  CADV_CHECK(epochs >= 0, "epochs must be non-negative, got ", epochs);
  CADV_CHECK(batch_size >= 1, "batch size must be positive, got ", batch_size);
  CADV_CHECK(val_split >= 1, "validation split must be positive, got ", val_split);
  CADV_CHECK(opt.lr > 0.0 && opt.momentum >= 0.0 && opt.momentum < 1.0 && opt.weight_decay >= 0.0,
             "bad optimizer settings");
  CADV_CHECK(opt.lr_gamma > 0.0, "lr gamma must be positive");
  for (int64_t m : opt.lr_milestones)
    CADV_CHECK(m >= 0 && m < epochs, "lr milestone ", m, " outside [0, ", epochs, ")");
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.train_attack.epsilon = 0.3;
  cfg.train_attack.step_size = 0.075;
  cfg.train_attack.iterations = 10;
  cfg.train_attack.random_start = true;
  cfg.val_attack.epsilon = 0.3;
  cfg.val_attack.step_size = 0.075;
  cfg.val_attack.iterations = 10;
  return cfg;
}

Sgd::Sgd(std::vector<Tensor<double>> params, const OptimizerConfig& cfg)
    : params_(std::move(params)), cfg_(cfg), lr_(cfg.lr) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.data().size(), 0.0);
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Sgd::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    std::vector<double>& v = velocity_[i];
    std::vector<double>& w = params_[i].data();
    const std::vector<double>& g = params_[i].grad();
    for (size_t j = 0; j < w.size(); ++j) {
      v[j] = cfg_.momentum * v[j] + g[j] + cfg_.weight_decay * w[j];
      w[j] -= lr_ * v[j];
    }
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::string metric_csv(const MetricLog& log) {
  std::string out =
      "epoch,total_loss,adv_ce,nat_ce,style_adv,style_nat,nat_val_acc,rob_val_acc,lr,seconds\n";
  for (const EpochRow& r : log.rows) {
    out += std::to_string(r.epoch);
    for (double v : {r.total_loss, r.adv_ce, r.nat_ce, r.style_adv, r.style_nat, r.nat_val_acc,
                     r.rob_val_acc, r.lr, r.seconds})
      out += "," + fmt_double(v);
    out += "\n";
  }
  return out;
}

void write_metrics_csv(const std::string& path, const MetricLog& log) {
  std::ofstream f(path, std::ios::trunc);
  CADV_CHECK(f.good(), "cannot open ", path, " for writing");
  f << metric_csv(log);
  CADV_CHECK(f.good(), "short write to ", path);
}

namespace {

// Natural logits without touching parameter gradients.
Tensor<double> eval_logits(const Classifier<double>& model, Tensor<double> x) {
  Tape<double> tape(GradScope::watched);
  return forward(tape, model, x).logits;
}

std::vector<int64_t> iota_idx(int64_t lo, int64_t hi) {
  std::vector<int64_t> idx(static_cast<size_t>(hi - lo));
  std::iota(idx.begin(), idx.end(), lo);
  return idx;
}

}  // namespace

double dataset_accuracy(const Classifier<double>& model, const Dataset& ds,
                        const AttackConfig* attack, int64_t batch_size) {
  CADV_CHECK(ds.size() > 0, "empty dataset");
  CADV_CHECK(batch_size >= 1, "batch size must be positive");
  const bool flat = model.spec.arch == Arch::mlp;
  int64_t correct = 0;
  for (int64_t lo = 0; lo < ds.size(); lo += batch_size) {
    const int64_t hi = std::min(ds.size(), lo + batch_size);
    Tensor<double> x = batch_x<double>(ds, iota_idx(lo, hi), flat);
    const std::vector<int64_t> y = batch_y(ds, iota_idx(lo, hi));
    if (attack != nullptr) {
      AttackConfig a = *attack;
      a.seed = Rng::derive(attack->seed, 0x9e11, static_cast<uint64_t>(lo));
      x = pgd(model, x, y, a).x_adv;
    }
    correct += count_correct(eval_logits(model, x), y);
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

TrainResult train(const RunConfig& cfg, const Dataset& data) {
  cfg.validate();
  data.validate();
  CADV_CHECK(cfg.val_split < data.size(), "validation split ", cfg.val_split,
             " swallows the whole dataset of ", data.size());
  const int64_t n_train = data.size() - cfg.val_split;

  Dataset val;
  val.x = batch_x<double>(data, iota_idx(n_train, data.size()), data.x.ndim() == 2);
  val.y = batch_y(data, iota_idx(n_train, data.size()));
  if (!data.style.empty()) val.style = batch_style(data, iota_idx(n_train, data.size()));
  val.k = data.k;

  TrainResult out;
  Classifier<double> model = build_classifier<double>(cfg.net, Rng::derive(cfg.seed, 1));
  Sgd sgd(model.parameters(), cfg.opt);
  const bool flat = model.spec.arch == Arch::mlp;

  AttackConfig train_att = cfg.train_attack;
  train_att.loss_kind =
      cfg.objective.trades_family() ? AttackConfig::Loss::kl_to_natural : AttackConfig::Loss::ce;

  out.best_rob = -1.0;
  std::vector<int64_t> order = iota_idx(0, n_train);
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (std::find(cfg.opt.lr_milestones.begin(), cfg.opt.lr_milestones.end(), epoch) !=
        cfg.opt.lr_milestones.end())
      sgd.set_lr(sgd.lr() * cfg.opt.lr_gamma);

    Rng shuffler(Rng::derive(cfg.seed, 2, static_cast<uint64_t>(epoch)));
    shuffler.shuffle(order);

    EpochRow row;
    row.epoch = epoch;
    row.lr = sgd.lr();
    int64_t steps = 0;
    for (int64_t lo = 0; lo < n_train; lo += cfg.batch_size, ++steps) {
      const int64_t hi = std::min(n_train, lo + cfg.batch_size);
      const std::vector<int64_t> idx(order.begin() + lo, order.begin() + hi);
      Tensor<double> x = batch_x<double>(data, idx, flat);
      const std::vector<int64_t> y = batch_y(data, idx);

      train_att.seed = Rng::derive(cfg.seed, 3, static_cast<uint64_t>(epoch),
                                   static_cast<uint64_t>(steps));
      AdversarialBatch<double> adv = pgd(model, x, y, train_att);

      // The residual scales with |Wc| |M|, so normalize before asserting:
      // diverging weights must surface as a non-finite loss below, not here.
      const double resid = reproject_style_map(model);
      double wc_max = 0.0, m_max = 0.0;
      for (double v : model.Wc.data()) wc_max = std::max(wc_max, std::fabs(v));
      for (double v : model.cov.M) m_max = std::max(m_max, std::fabs(v));
      const double scale = std::max(1.0, wc_max * m_max * static_cast<double>(model.spec.d()));
      CADV_CHECK(resid < 1e-6 * scale, "style re-projection residual ", resid, " at epoch ",
                 epoch, " step ", steps);
      {
        Tape<double> side(GradScope::watched);
        update_covariance(model.cov, forward(side, model, x).R);
      }

      Tape<double> tape;
      LossBreakdown<double> lb = causaladv_objective(tape, model, x, adv.x_adv, y, cfg.objective);
      const double total = lb.total.item();
      if (!std::isfinite(total))
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(steps) + ": loss " + std::to_string(total));
      sgd.zero_grad();
      tape.backward(lb.total);
      sgd.step();

      row.total_loss += total;
      row.adv_ce += lb.adv_ce;
      row.nat_ce += lb.nat_ce;
      row.style_adv += lb.style_adv;
      row.style_nat += lb.style_nat;
    }
    row.total_loss /= static_cast<double>(steps);
    row.adv_ce /= static_cast<double>(steps);
    row.nat_ce /= static_cast<double>(steps);
    row.style_adv /= static_cast<double>(steps);
    row.style_nat /= static_cast<double>(steps);

    row.nat_val_acc = dataset_accuracy(model, val, nullptr, cfg.batch_size);
    row.rob_val_acc = dataset_accuracy(model, val, &cfg.val_attack, cfg.batch_size);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.log.rows.push_back(row);

    if (row.rob_val_acc > out.best_rob) {
      out.best_rob = row.rob_val_acc;
      out.best_epoch = epoch;
      reproject_style_map(model);
      out.best = clone_classifier(model);
    }
  }

  reproject_style_map(model);
  out.last = clone_classifier(model);
  if (out.best_epoch < 0) {  // epochs == 0: both checkpoints are the init
    out.best = clone_classifier(model);
    out.best_rob = 0.0;
  }
  return out;
}

RobustnessReport evaluate_robustness(
    const Classifier<double>& model, const Dataset& ds,
    const std::vector<std::pair<std::string, AttackConfig>>& attacks,
    const std::string& checkpoint_id, int64_t batch_size) {
  RobustnessReport report;
  report.checkpoint_id = checkpoint_id;
  report.natural = dataset_accuracy(model, ds, nullptr, batch_size);
  for (const auto& [name, att] : attacks) {
    att.validate();
    report.attacks.push_back({name, att, dataset_accuracy(model, ds, &att, batch_size)});
  }
  return report;
}

std::string report_text(const RobustnessReport& report) {
  std::string out = "checkpoint: " + report.checkpoint_id + "\n";
  out += "natural: " + fmt_double(report.natural) + "\n";
  for (const AttackResult& r : report.attacks) {
    out += r.name + ": " + fmt_double(r.accuracy) + "  (eps=" + fmt_double(r.config.epsilon) +
           " step=" + fmt_double(r.config.step_size) +
           " iters=" + std::to_string(r.config.iterations) +
           " loss=" + attack_loss_name(r.config.loss_kind) + ")\n";
  }
  return out;
}

ObfuscationChecklist obfuscation_checklist(const Classifier<double>& model,
                                           const Classifier<double>& surrogate, const Dataset& ds,
                                           const AttackConfig& base, int64_t batch_size) {
  base.validate();
  AttackConfig one_step = base;
  one_step.iterations = 1;
  one_step.step_size = base.epsilon;
  one_step.random_start = false;
  AttackConfig strong = base;
  strong.iterations = base.iterations * 5;

  const double acc_fgsm = dataset_accuracy(model, ds, &one_step, batch_size);
  const double acc_white = dataset_accuracy(model, ds, &base, batch_size);
  const double acc_strong = dataset_accuracy(model, ds, &strong, batch_size);

  double black_correct = 0.0;
  const bool flat = model.spec.arch == Arch::mlp;
  for (int64_t lo = 0; lo < ds.size(); lo += batch_size) {
    const int64_t hi = std::min(ds.size(), lo + batch_size);
    Tensor<double> x = batch_x<double>(ds, iota_idx(lo, hi), flat);
    AttackConfig a = base;
    a.seed = Rng::derive(base.seed, 0xb1ac, static_cast<uint64_t>(lo));
    black_correct += transfer_attack(surrogate, model, x, batch_y(ds, iota_idx(lo, hi)), a) *
                     static_cast<double>(hi - lo);
  }
  const double acc_black = black_correct / static_cast<double>(ds.size());

  const bool degenerate = base.epsilon == 0.0;
  auto item = [degenerate](const char* name, double lhs, double rhs) {
    return ChecklistItem{name, lhs, rhs, degenerate ? lhs >= rhs : lhs > rhs, degenerate};
  };
  ObfuscationChecklist cl;
  cl.a = item("fgsm_above_iterative", acc_fgsm, acc_white);
  cl.b = item("blackbox_above_whitebox", acc_black, acc_white);
  cl.c = item("more_steps_hurt", acc_white, acc_strong);
  return cl;
}

std::string checklist_text(const ObfuscationChecklist& cl) {
  std::string out;
  for (const ChecklistItem* it : {&cl.a, &cl.b, &cl.c}) {
    out += it->name + ": " + (it->pass ? "pass" : "FAIL") + "  " + fmt_double(it->lhs) + " vs " +
           fmt_double(it->rhs) + (it->degenerate ? "  (degenerate: eps=0)" : "") + "\n";
  }
  return out;
}

std::vector<KlBin> kl_bin_analysis(const Classifier<double>& model, const Dataset& ds,
                                   const AttackConfig& attack, int64_t n_bins,
                                   int64_t batch_size) {
  CADV_CHECK(ds.size() > 0, "empty dataset");
  CADV_CHECK(n_bins >= 1, "need at least one bin");
  attack.validate();
  const bool flat = model.spec.arch == Arch::mlp;
  const int64_t k = model.spec.k;

  std::vector<double> kl(static_cast<size_t>(ds.size()));
  std::vector<char> hit(static_cast<size_t>(ds.size()));
  for (int64_t lo = 0; lo < ds.size(); lo += batch_size) {
    const int64_t hi = std::min(ds.size(), lo + batch_size);
    Tensor<double> x = batch_x<double>(ds, iota_idx(lo, hi), flat);
    const std::vector<int64_t> y = batch_y(ds, iota_idx(lo, hi));
    AttackConfig a = attack;
    a.seed = Rng::derive(attack.seed, 0x6b1, static_cast<uint64_t>(lo));
    AdversarialBatch<double> adv = pgd(model, x, y, a);

    Tape<double> tape(GradScope::watched);
    Tensor<double> lpn = tape.log_softmax(forward(tape, model, x).logits);
    Tensor<double> lpa = tape.log_softmax(forward(tape, model, adv.x_adv).logits);
    for (int64_t i = 0; i < hi - lo; ++i) {
      double d = 0.0;
      int64_t arg = 0;
      for (int64_t j = 0; j < k; ++j) {
        const double ln = lpn.at(i * k + j), la = lpa.at(i * k + j);
        d += std::exp(ln) * (ln - la);
        if (la > lpa.at(i * k + arg)) arg = j;
      }
      kl[static_cast<size_t>(lo + i)] = d;
      hit[static_cast<size_t>(lo + i)] = arg == y[static_cast<size_t>(i)];
    }
  }

  const auto [mn_it, mx_it] = std::minmax_element(kl.begin(), kl.end());
  const double mn = *mn_it, mx = *mx_it, width = (mx - mn) / static_cast<double>(n_bins);
  std::vector<KlBin> bins(static_cast<size_t>(n_bins));
  for (int64_t b = 0; b < n_bins; ++b) {
    bins[static_cast<size_t>(b)].lo = mn + width * static_cast<double>(b);
    bins[static_cast<size_t>(b)].hi = mn + width * static_cast<double>(b + 1);
  }
  for (size_t i = 0; i < kl.size(); ++i) {
    int64_t b = width > 0.0 ? static_cast<int64_t>((kl[i] - mn) / width) : 0;
    b = std::clamp<int64_t>(b, 0, n_bins - 1);
    bins[static_cast<size_t>(b)].count += 1;
    bins[static_cast<size_t>(b)].robust_acc += hit[i] ? 1.0 : 0.0;
  }
  for (KlBin& b : bins)
    if (b.count > 0) b.robust_acc /= static_cast<double>(b.count);
  return bins;
}

OverfitSummary overfitting_curve(const MetricLog& log) {
  CADV_CHECK(!log.rows.empty(), "empty metric log");
  OverfitSummary s;
  s.best_rob = -1.0;
  for (const EpochRow& r : log.rows) {
    if (r.rob_val_acc > s.best_rob) {
      s.best_rob = r.rob_val_acc;
      s.best_epoch = r.epoch;
    }
  }
  s.final_rob = log.rows.back().rob_val_acc;
  s.gap = s.best_rob - s.final_rob;
  return s;
}

}  // namespace cadv
