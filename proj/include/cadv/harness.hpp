#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cadv/diagnostics.hpp"

namespace cadv {

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::vector<int64_t> lr_milestones;  // epochs where lr is scaled by lr_gamma
  double lr_gamma = 0.1;
};

// One full training run. The training attack's loss kind is forced from the
// objective variant (CE for the Madry family, KL-to-natural for TRADES), so
// only its geometry (epsilon, step, iterations, random start) matters here.
struct RunConfig {
  std::string dataset_id = "glyphs";
  NetworkSpec net;
  ObjectiveSpec objective;
  AttackConfig train_attack;
  AttackConfig val_attack;  // per-epoch robust validation
  std::vector<std::pair<std::string, AttackConfig>> eval_attacks;
  OptimizerConfig opt;
  int64_t epochs = 15;
  int64_t batch_size = 128;
  int64_t val_split = 1000;  // held-out tail of the training set
  uint64_t seed = 0;

  void validate() const;
};

RunConfig default_run_config();

// SGD with classic momentum and coupled weight decay:
//   v <- mu v + (g + wd p);  p <- p - lr v
class Sgd {
 public:
  Sgd(std::vector<Tensor<double>> params, const OptimizerConfig& cfg);
  void zero_grad();
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Tensor<double>> params_;
  std::vector<std::vector<double>> velocity_;
  OptimizerConfig cfg_;
  double lr_;
};

struct EpochRow {
  int64_t epoch = 0;
  double total_loss = 0, adv_ce = 0, nat_ce = 0, style_adv = 0, style_nat = 0;
  double nat_val_acc = 0, rob_val_acc = 0;
  double lr = 0, seconds = 0;
};

struct MetricLog {
  std::vector<EpochRow> rows;
};

std::string metric_csv(const MetricLog& log);
void write_metrics_csv(const std::string& path, const MetricLog& log);

struct TrainResult {
  Classifier<double> best, last;
  MetricLog log;
  int64_t best_epoch = -1;  // -1 when no epoch ran
  double best_rob = 0.0;
};

// Per step: attack -> re-project style map -> update covariance -> objective
// -> SGD step. Per epoch: natural + robust accuracy on the validation tail;
// best checkpoint maximizes robust validation accuracy (first maximum wins).
TrainResult train(const RunConfig& cfg, const Dataset& data);

// Natural accuracy when attack is null, attacked accuracy otherwise.
double dataset_accuracy(const Classifier<double>& model, const Dataset& ds,
                        const AttackConfig* attack, int64_t batch_size = 256);

struct AttackResult {
  std::string name;
  AttackConfig config;
  double accuracy = 0.0;
};

struct RobustnessReport {
  std::string checkpoint_id;  // "best" | "last" | caller-chosen
  double natural = 0.0;
  std::vector<AttackResult> attacks;
};

RobustnessReport evaluate_robustness(const Classifier<double>& model, const Dataset& ds,
                                     const std::vector<std::pair<std::string, AttackConfig>>& attacks,
                                     const std::string& checkpoint_id = "last",
                                     int64_t batch_size = 256);
std::string report_text(const RobustnessReport& report);

// Gradient-obfuscation sanity checks:
//   a) one-step FGSM leaves higher accuracy than the iterated attack,
//   b) black-box transfer from a surrogate beats the white-box attack,
//   c) five times more steps do not increase accuracy.
// With epsilon = 0 all accuracies coincide and items pass as "degenerate".
struct ChecklistItem {
  std::string name;
  double lhs = 0.0, rhs = 0.0;  // pass means lhs > rhs (or >= when degenerate)
  bool pass = false;
  bool degenerate = false;
};

struct ObfuscationChecklist {
  ChecklistItem a, b, c;
  bool all_pass() const { return a.pass && b.pass && c.pass; }
};

ObfuscationChecklist obfuscation_checklist(const Classifier<double>& model,
                                           const Classifier<double>& surrogate, const Dataset& ds,
                                           const AttackConfig& base, int64_t batch_size = 256);
std::string checklist_text(const ObfuscationChecklist& cl);

// Per-sample KL(h(x) || h(x_adv)) split into equal-width bins over the
// observed range, with robust accuracy per bin.
struct KlBin {
  double lo = 0.0, hi = 0.0;
  int64_t count = 0;
  double robust_acc = 0.0;
};

std::vector<KlBin> kl_bin_analysis(const Classifier<double>& model, const Dataset& ds,
                                   const AttackConfig& attack, int64_t n_bins = 10,
                                   int64_t batch_size = 256);

struct OverfitSummary {
  int64_t best_epoch = 0;
  double best_rob = 0.0, final_rob = 0.0, gap = 0.0;
};

OverfitSummary overfitting_curve(const MetricLog& log);

}  // namespace cadv
