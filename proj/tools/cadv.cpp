#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cadv/config.hpp"
#include "cadv/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  uint64_t seed = 0;
  bool has_seed = false;
  int64_t threads = 1;
  std::string precision = "f64";
};

void add_common(CLI::App* sub, CommonOpts& c, bool out_required) {
  sub->add_option("--config", c.config, "config file (JSON)")->required();
  sub->add_option("--set", c.sets, "dotted-key override, e.g. objective.lambda=0.5");
  auto* out = sub->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
  sub->add_option("--seed", c.seed, "run seed (overrides the config's)");
  sub->add_option("--threads", c.threads, "worker threads")->check(CLI::Range(int64_t(1), int64_t(256)));
  sub->add_option("--precision", c.precision, "numeric precision")
      ->check(CLI::IsMember({"f32", "f64"}));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  CADV_CHECK(out.good(), "cannot write ", path);
  out << text;
  CADV_CHECK(out.good(), "short write to ", path);
}

// Every run drops the fully-resolved config next to its outputs.
void open_out_dir(const std::string& out, const json& resolved) {
  fs::create_directories(out);
  write_text(out + "/resolved_config.json", resolved.dump(2) + "\n");
}

std::string ckpt_id(const std::string& path) { return fs::path(path).stem().string(); }

int cmd_train(const cadv::FullConfig& fc, const json& resolved, const std::string& out) {
  cadv::Dataset train_ds = cadv::materialize(fc.train_data);
  cadv::Dataset test_ds = cadv::materialize(fc.test_data);
  open_out_dir(out, resolved);

  cadv::TrainResult res = cadv::train(fc.run, train_ds);
  cadv::write_metrics_csv(out + "/metrics.csv", res.log);
  cadv::save_classifier(out + "/best.ckpt", res.best);
  cadv::save_classifier(out + "/last.ckpt", res.last);

  cadv::RobustnessReport best = cadv::evaluate_robustness(res.best, test_ds, fc.run.eval_attacks, "best");
  cadv::RobustnessReport last = cadv::evaluate_robustness(res.last, test_ds, fc.run.eval_attacks, "last");
  write_text(out + "/report_best.txt", cadv::report_text(best));
  write_text(out + "/report_last.txt", cadv::report_text(last));

  std::cout << "trained " << cadv::variant_name(fc.run.objective.variant) << " for " << fc.run.epochs
            << " epochs; best epoch " << res.best_epoch << " (robust val " << res.best_rob << ")\n"
            << cadv::report_text(best) << cadv::report_text(last);
  return 0;
}

int cmd_eval(const cadv::FullConfig& fc, const json& resolved, const std::string& out,
             const std::string& ckpt) {
  cadv::Dataset test_ds = cadv::materialize(fc.test_data);
  cadv::Classifier<double> model = cadv::load_classifier<double>(ckpt);
  cadv::RobustnessReport rep = cadv::evaluate_robustness(model, test_ds, fc.run.eval_attacks, ckpt_id(ckpt));
  std::cout << cadv::report_text(rep);
  if (!out.empty()) {
    open_out_dir(out, resolved);
    write_text(out + "/report_" + rep.checkpoint_id + ".txt", cadv::report_text(rep));
  }
  return 0;
}

int cmd_attack(const cadv::FullConfig& fc, const json& resolved, const std::string& out,
               const std::string& ckpt) {
  cadv::Dataset test_ds = cadv::materialize(fc.test_data);
  cadv::Classifier<double> model = cadv::load_classifier<double>(ckpt);
  const bool flat = model.spec.arch == cadv::Arch::mlp;
  const int64_t n = test_ds.size();

  cadv::Tensor<double> x_adv_all(test_ds.x.shape());
  int64_t correct = 0;
  double loss_sum = 0.0;
  for (int64_t lo = 0; lo < n; lo += 256) {
    const int64_t hi = std::min(n, lo + 256);
    std::vector<int64_t> idx(static_cast<size_t>(hi - lo));
    std::iota(idx.begin(), idx.end(), lo);
    cadv::Tensor<double> x = cadv::batch_x<double>(test_ds, idx, flat);
    std::vector<int64_t> y = cadv::batch_y(test_ds, idx);
    cadv::AttackConfig att = fc.attack;
    att.seed = cadv::Rng::derive(fc.attack.seed, 0x9e11, static_cast<uint64_t>(lo));
    cadv::AdversarialBatch<double> adv = cadv::pgd(model, x, y, att);

    cadv::Tape<double> tape(cadv::GradScope::watched);
    correct += cadv::count_correct(cadv::forward(tape, model, adv.x_adv).logits, y);
    loss_sum += adv.loss_trace.back() * static_cast<double>(hi - lo);
    std::copy(adv.x_adv.data().begin(), adv.x_adv.data().end(),
              x_adv_all.data().begin() + lo * (x_adv_all.numel() / n));
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(n);

  char line[256];
  std::snprintf(line, sizeof line, "attack %s eps=%g iters=%ld: accuracy %.4f, final loss %.6g\n",
                cadv::attack_loss_name(fc.attack.loss_kind), fc.attack.epsilon,
                static_cast<long>(fc.attack.iterations), acc, loss_sum / static_cast<double>(n));
  std::cout << line;

  if (!out.empty()) {
    open_out_dir(out, resolved);
    cadv::Dataset adv_ds;
    adv_ds.x = x_adv_all;
    adv_ds.y = test_ds.y;
    adv_ds.k = test_ds.k;
    cadv::save_dataset(out + "/adv.bin", adv_ds);
    write_text(out + "/attack.txt", line);
  }
  return 0;
}

int cmd_diagnose(const cadv::FullConfig& fc, const json& resolved, const std::string& out,
                 const std::string& ckpt, const std::string& checklist, const std::string& surrogate,
                 int64_t kl_bins, bool gap) {
  cadv::Dataset test_ds = cadv::materialize(fc.test_data);
  cadv::Classifier<double> model = cadv::load_classifier<double>(ckpt);
  if (!out.empty()) open_out_dir(out, resolved);

  if (!checklist.empty()) {
    cadv::Classifier<double> sur = cadv::load_classifier<double>(surrogate);
    cadv::ObfuscationChecklist cl = cadv::obfuscation_checklist(model, sur, test_ds, fc.attack);
    std::cout << cadv::checklist_text(cl);
    if (!out.empty()) write_text(out + "/checklist.txt", cadv::checklist_text(cl));
  }
  if (kl_bins > 0) {
    std::vector<cadv::KlBin> bins = cadv::kl_bin_analysis(model, test_ds, fc.attack, kl_bins);
    std::string csv = "bin,lo,hi,count,robust_acc\n";
    for (size_t i = 0; i < bins.size(); ++i) {
      char row[160];
      std::snprintf(row, sizeof row, "%zu,%.6g,%.6g,%ld,%.4f\n", i, bins[i].lo, bins[i].hi,
                    static_cast<long>(bins[i].count), bins[i].robust_acc);
      csv += row;
    }
    std::cout << csv;
    if (!out.empty()) write_text(out + "/kl_bins.csv", csv);
  }
  if (gap) {
    std::vector<cadv::StyleGapRow> rows = cadv::conditional_association_gap(model, test_ds, fc.attack);
    std::string csv = "style,count,nat_ce,adv_ce,gap\n";
    for (const cadv::StyleGapRow& r : rows) {
      char row[160];
      std::snprintf(row, sizeof row, "%ld,%ld,%.6g,%.6g,%.6g\n", static_cast<long>(r.style),
                    static_cast<long>(r.count), r.nat_ce, r.adv_ce, r.gap());
      csv += row;
    }
    std::cout << csv;
    if (!out.empty()) write_text(out + "/gap.csv", csv);
  }
  return 0;
}

int cmd_gen_data(const cadv::FullConfig& fc, const json& resolved, const std::string& out) {
  cadv::Dataset train_ds = cadv::materialize(fc.train_data);
  cadv::Dataset test_ds = cadv::materialize(fc.test_data);
  open_out_dir(out, resolved);
  cadv::save_dataset(out + "/train.bin", train_ds);
  cadv::save_dataset(out + "/test.bin", test_ds);
  std::cout << "wrote " << train_ds.size() << " train and " << test_ds.size() << " test samples ("
            << fc.train_data.kind << ", k=" << train_ds.k << ") under " << out << "\n";
  return 0;
}

struct ParsedReport {
  std::vector<std::pair<std::string, double>> entries;  // natural first, then attacks in file order
};

ParsedReport parse_report_file(const std::string& path) {
  std::ifstream in(path);
  CADV_CHECK(in.good(), "missing report file: ", path);
  ParsedReport rep;
  std::string line;
  while (std::getline(in, line)) {
    const size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    if (key == "checkpoint") continue;
    rep.entries.emplace_back(key, std::stod(line.substr(colon + 1)));
  }
  CADV_CHECK(!rep.entries.empty(), "no metrics in report file: ", path);
  return rep;
}

double lookup(const ParsedReport& rep, const std::string& key) {
  for (const auto& [k, v] : rep.entries)
    if (k == key) return v;
  return -1.0;  // column absent for this run
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<std::string> methods;
  std::vector<ParsedReport> best, last;
  for (const std::string& dir : dirs) {
    fs::path p(dir);
    if (!p.has_filename()) p = p.parent_path();
    methods.push_back(p.filename().string());
    best.push_back(parse_report_file(dir + "/report_best.txt"));
    last.push_back(parse_report_file(dir + "/report_last.txt"));
  }

  // Columns follow the first run's report; runs missing a column show "-".
  std::vector<std::string> cols;
  for (const auto& [k, _] : best.front().entries) cols.push_back(k);

  std::string csv = "method";
  for (const char* group : {"best", "last"})
    for (const std::string& c : cols) csv += "," + std::string(group) + "_" + c;
  csv += "\n";
  for (size_t i = 0; i < methods.size(); ++i) {
    csv += methods[i];
    for (const ParsedReport* rep : {&best[i], &last[i]}) {
      for (const std::string& c : cols) {
        const double v = lookup(*rep, c);
        char cell[32];
        if (v < 0.0)
          std::snprintf(cell, sizeof cell, ",-");
        else
          std::snprintf(cell, sizeof cell, ",%.4f", v);
        csv += cell;
      }
    }
    csv += "\n";
  }
  std::cout << csv;
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(out + "/report_table.csv", csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cadv: causal-inspired adversarial training laboratory"};
  app.require_subcommand(1);

  CommonOpts c;
  std::string ckpt, surrogate, checklist;
  int64_t kl_bins = 0;
  bool gap = false;
  std::vector<std::string> report_dirs;

  CLI::App* train = app.add_subcommand("train", "train a model and write metrics + checkpoints");
  add_common(train, c, /*out_required=*/true);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint against the eval attacks");
  add_common(eval, c, false);
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();

  CLI::App* attack = app.add_subcommand("attack", "run the configured attack on a checkpoint");
  add_common(attack, c, false);
  attack->add_option("--ckpt", ckpt, "checkpoint file")->required();

  CLI::App* diagnose = app.add_subcommand("diagnose", "obfuscation checklist / KL bins / style gap");
  add_common(diagnose, c, false);
  diagnose->add_option("--ckpt", ckpt, "checkpoint file")->required();
  diagnose->add_option("--checklist", checklist, "run a named checklist (obfuscation)");
  diagnose->add_option("--surrogate", surrogate, "surrogate checkpoint for the black-box item");
  diagnose->add_option("--kl-bins", kl_bins, "bin count for the KL histogram");
  diagnose->add_flag("--gap", gap, "per-style natural-vs-adversarial CE gap");

  CLI::App* gen = app.add_subcommand("gen-data", "generate train/test datasets");
  add_common(gen, c, /*out_required=*/true);

  CLI::App* report = app.add_subcommand("report", "tabulate robustness reports from run directories");
  report->add_option("dirs", report_dirs, "run directories")->required();
  report->add_option("--out", c.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version exit 0; any usage problem exits 1
  }

  if (app.got_subcommand(report)) {
    try {
      return cmd_report(report_dirs, c.out);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }

  json resolved;
  cadv::FullConfig fc;
  try {
    if (c.precision == "f32") {
      std::cerr << "precision f32 is only exposed through the library; runs are f64\n";
      return 1;
    }
    if (c.threads > 1) std::cerr << "note: single-threaded build, running with 1 thread\n";
    resolved = cadv::resolve_config(c.config, c.sets);
    if (app.get_subcommand()->count("--seed") > 0)
      cadv::apply_override(resolved, "seed=" + std::to_string(c.seed));
    fc = cadv::config_from_json(resolved);
    if (app.got_subcommand(diagnose)) {
      if (!checklist.empty()) {
        CADV_CHECK(checklist == "obfuscation", "unknown checklist '", checklist, "'");
        CADV_CHECK(!surrogate.empty(), "--checklist obfuscation needs --surrogate");
      }
      CADV_CHECK(!checklist.empty() || kl_bins > 0 || gap,
                 "diagnose needs --checklist, --kl-bins, or --gap");
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand(train)) return cmd_train(fc, resolved, c.out);
    if (app.got_subcommand(eval)) return cmd_eval(fc, resolved, c.out, ckpt);
    if (app.got_subcommand(attack)) return cmd_attack(fc, resolved, c.out, ckpt);
    if (app.got_subcommand(gen)) return cmd_gen_data(fc, resolved, c.out);
    return cmd_diagnose(fc, resolved, c.out, ckpt, checklist, surrogate, kl_bins, gap);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
