#include "cadv/config.hpp"

#include <cstdlib>
#include <fstream>

namespace cadv {
namespace {

using nlohmann::json;

// int/unsigned/float collapse into one class so "lr": 1 is a fine double.
std::string type_class(const json& j) {
  if (j.is_number()) return "number";
  if (j.is_boolean()) return "boolean";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

std::string join_key(const std::string& prefix, const std::string& k) {
  return prefix.empty() ? k : prefix + "." + k;
}

json attack_to_json(const AttackConfig& a) {
  return json{{"epsilon", a.epsilon},
              {"step_size", a.step_size},
              {"iterations", a.iterations},
              {"random_start", a.random_start},
              {"loss", attack_loss_name(a.loss_kind)},
              {"kappa", a.kappa},
              {"clamp_lo", a.clamp_lo},
              {"clamp_hi", a.clamp_hi},
              {"seed", a.seed}};
}

AttackConfig attack_from_json(const json& j) {
  AttackConfig a;
  a.epsilon = j.at("epsilon").get<double>();
  a.step_size = j.at("step_size").get<double>();
  a.iterations = j.at("iterations").get<int64_t>();
  a.random_start = j.at("random_start").get<bool>();
  a.loss_kind = attack_loss_from_name(j.at("loss").get<std::string>());
  a.kappa = j.at("kappa").get<double>();
  a.clamp_lo = j.at("clamp_lo").get<double>();
  a.clamp_hi = j.at("clamp_hi").get<double>();
  a.seed = j.at("seed").get<uint64_t>();
  return a;
}

json data_to_json(const DataSpec& d) {
  return json{{"kind", d.kind},
              {"n", d.n},
              {"seed", d.seed},
              {"path", d.path},
              {"images", d.images},
              {"labels", d.labels},
              {"synth",
               {{"d_c", d.synth.d_c},
                {"d_sty", d.synth.d_sty},
                {"k", d.synth.k},
                {"block_c", d.synth.block_c},
                {"block_s", d.synth.block_s},
                {"rho", d.synth.rho},
                {"noise", d.synth.noise},
                {"gain", d.synth.gain},
                {"mix_seed", d.synth.mix_seed}}}};
}

DataSpec data_from_json(const json& j) {
  DataSpec d;
  d.kind = j.at("kind").get<std::string>();
  d.n = j.at("n").get<int64_t>();
  d.seed = j.at("seed").get<uint64_t>();
  d.path = j.at("path").get<std::string>();
  d.images = j.at("images").get<std::string>();
  d.labels = j.at("labels").get<std::string>();
  const json& s = j.at("synth");
  d.synth.d_c = s.at("d_c").get<int64_t>();
  d.synth.d_sty = s.at("d_sty").get<int64_t>();
  d.synth.k = s.at("k").get<int64_t>();
  d.synth.block_c = s.at("block_c").get<int64_t>();
  d.synth.block_s = s.at("block_s").get<int64_t>();
  d.synth.rho = s.at("rho").get<double>();
  d.synth.noise = s.at("noise").get<double>();
  d.synth.gain = s.at("gain").get<double>();
  d.synth.mix_seed = s.at("mix_seed").get<uint64_t>();
  return d;
}

// Relative idx/file paths resolve against $CADV_DATA_DIR when it is set.
std::string resolve_path(const std::string& p) {
  if (p.empty() || p.front() == '/') return p;
  const char* root = std::getenv("CADV_DATA_DIR");
  if (root != nullptr && *root != '\0') return std::string(root) + "/" + p;
  return p;
}

FullConfig default_full_config() {
  FullConfig fc;
  fc.train_data.kind = "glyphs";
  fc.train_data.n = 10000;
  fc.train_data.seed = 1;
  fc.test_data.kind = "glyphs";
  fc.test_data.n = 2000;
  fc.test_data.seed = 2;
  fc.run = default_run_config();

  AttackConfig fgsm_cfg;
  fgsm_cfg.epsilon = 0.3;
  fgsm_cfg.step_size = 0.3;
  fgsm_cfg.iterations = 1;
  AttackConfig pgd40;
  pgd40.epsilon = 0.3;
  pgd40.step_size = 0.01;
  pgd40.iterations = 40;
  AttackConfig cw40 = pgd40;
  cw40.loss_kind = AttackConfig::Loss::cw_margin;
  fc.run.eval_attacks = {{"fgsm", fgsm_cfg}, {"pgd40", pgd40}, {"cw40", cw40}};
  fc.attack = pgd40;
  return fc;
}

}  // namespace

void DataSpec::validate() const {
  CADV_CHECK(kind == "glyphs" || kind == "synth" || kind == "idx" || kind == "file",
             "unknown dataset kind '", kind, "'");
  if (kind == "glyphs" || kind == "synth") CADV_CHECK(n >= 1, "dataset size must be positive, got ", n);
  if (kind == "synth") synth.validate();
  if (kind == "idx") CADV_CHECK(!images.empty() && !labels.empty(), "idx dataset needs images and labels paths");
  if (kind == "file") CADV_CHECK(!path.empty(), "file dataset needs a path");
}

Dataset materialize(const DataSpec& spec) {
  spec.validate();
  if (spec.kind == "glyphs") return glyph_digits(spec.n, spec.seed);
  if (spec.kind == "synth") return synth_generate(spec.synth, spec.n, spec.seed);
  if (spec.kind == "idx") return load_idx(resolve_path(spec.images), resolve_path(spec.labels));
  return load_dataset(resolve_path(spec.path));
}

nlohmann::json default_config_json() { return config_to_json(default_full_config()); }

void merge_config(nlohmann::json& base, const nlohmann::json& user, const std::string& prefix) {
  const std::string where = prefix.empty() ? "config" : prefix;
  if (base.is_object()) {
    CADV_CHECK(user.is_object(), "config type mismatch at ", where, ": expected object, got ", type_class(user));
    for (const auto& [k, v] : user.items()) {
      CADV_CHECK(base.contains(k), "unknown config key: ", join_key(prefix, k));
      merge_config(base[k], v, join_key(prefix, k));
    }
  } else if (base.is_array()) {
    CADV_CHECK(user.is_array(), "config type mismatch at ", where, ": expected array, got ", type_class(user));
    if (!base.empty() && base.front().is_object()) {
      // each user entry is completed from the schema defaults for this path,
      // never from whatever happens to sit first in the default list
      json tmpl;
      if (prefix == "eval_attacks") {
        tmpl = attack_to_json(AttackConfig{});
        tmpl["name"] = "";
      } else {
        tmpl = base.front();
        if (tmpl.contains("name")) tmpl["name"] = "";
      }
      json out = json::array();
      for (size_t i = 0; i < user.size(); ++i) {
        json entry = tmpl;
        merge_config(entry, user[i], join_key(prefix, std::to_string(i)));
        out.push_back(std::move(entry));
      }
      base = std::move(out);
    } else {
      const std::string want = base.empty() ? "number" : type_class(base.front());
      for (size_t i = 0; i < user.size(); ++i)
        CADV_CHECK(type_class(user[i]) == want, "config type mismatch at ", join_key(prefix, std::to_string(i)),
                   ": expected ", want, ", got ", type_class(user[i]));
      base = user;
    }
  } else {
    CADV_CHECK(type_class(user) == type_class(base), "config type mismatch at ", where, ": expected ",
               type_class(base), ", got ", type_class(user));
    base = user;
  }
}

void apply_override(nlohmann::json& j, const std::string& spec) {
  const size_t eq = spec.find('=');
  CADV_CHECK(eq != std::string::npos && eq > 0, "invalid override '", spec, "' (want key=value)");
  const std::string key = spec.substr(0, eq);
  const std::string vtext = spec.substr(eq + 1);

  json value;
  try {
    value = json::parse(vtext);
  } catch (const json::parse_error&) {
    value = vtext;  // bare words are strings
  }

  json* cur = &j;
  size_t pos = 0;
  while (pos <= key.size()) {
    const size_t dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    CADV_CHECK(!part.empty(), "invalid override key: ", key);
    if (cur->is_object()) {
      CADV_CHECK(cur->contains(part), "invalid override key: ", key, " (no key '", part, "')");
      cur = &(*cur)[part];
    } else if (cur->is_array()) {
      CADV_CHECK(part.find_first_not_of("0123456789") == std::string::npos, "invalid override key: ", key,
                 " ('", part, "' is not an array index)");
      const size_t idx = std::stoul(part);
      CADV_CHECK(idx < cur->size(), "invalid override key: ", key, " (index ", part, " out of range)");
      cur = &(*cur)[idx];
    } else {
      CADV_CHECK(false, "invalid override key: ", key, " ('", part, "' descends below a scalar)");
    }
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  merge_config(*cur, value, key);
}

FullConfig config_from_json(const nlohmann::json& j) {
  FullConfig fc;
  const json& data = j.at("data");
  fc.train_data = data_from_json(data.at("train"));
  fc.test_data = data_from_json(data.at("test"));

  const json& net = j.at("net");
  fc.run.net.arch = arch_from_name(net.at("arch").get<std::string>());
  fc.run.net.in_channels = net.at("in_channels").get<int64_t>();
  fc.run.net.in_h = net.at("in_h").get<int64_t>();
  fc.run.net.in_w = net.at("in_w").get<int64_t>();
  fc.run.net.input_dim = net.at("input_dim").get<int64_t>();
  fc.run.net.layers = net.at("layers").get<std::vector<int64_t>>();
  fc.run.net.k = net.at("k").get<int64_t>();
  fc.run.net.d_s = net.at("d_s").get<int64_t>();
  fc.run.net.sigma = net.at("sigma").get<double>();

  const json& obj = j.at("objective");
  fc.run.objective.variant = variant_from_name(obj.at("variant").get<std::string>());
  fc.run.objective.gamma = obj.at("gamma").get<double>();
  fc.run.objective.lambda = obj.at("lambda").get<double>();
  fc.run.objective.beta = obj.at("beta").get<double>();
  fc.run.objective.trades_beta = obj.at("trades_beta").get<double>();

  fc.run.train_attack = attack_from_json(j.at("train_attack"));
  fc.run.val_attack = attack_from_json(j.at("val_attack"));
  fc.run.eval_attacks.clear();
  for (const json& e : j.at("eval_attacks")) {
    const std::string name = e.at("name").get<std::string>();
    for (const auto& [prev, _] : fc.run.eval_attacks)
      CADV_CHECK(prev != name, "duplicate eval attack name '", name, "'");
    fc.run.eval_attacks.emplace_back(name, attack_from_json(e));
  }

  const json& opt = j.at("opt");
  fc.run.opt.lr = opt.at("lr").get<double>();
  fc.run.opt.momentum = opt.at("momentum").get<double>();
  fc.run.opt.weight_decay = opt.at("weight_decay").get<double>();
  fc.run.opt.lr_milestones = opt.at("lr_milestones").get<std::vector<int64_t>>();
  fc.run.opt.lr_gamma = opt.at("lr_gamma").get<double>();

  fc.run.epochs = j.at("epochs").get<int64_t>();
  fc.run.batch_size = j.at("batch_size").get<int64_t>();
  fc.run.val_split = j.at("val_split").get<int64_t>();
  fc.run.seed = j.at("seed").get<uint64_t>();
  fc.run.dataset_id = fc.train_data.kind;

  fc.attack = attack_from_json(j.at("attack"));

  fc.train_data.validate();
  fc.test_data.validate();
  fc.run.validate();
  fc.attack.validate();
  return fc;
}

nlohmann::json config_to_json(const FullConfig& cfg) {
  json eval = json::array();
  for (const auto& [name, att] : cfg.run.eval_attacks) {
    json e = attack_to_json(att);
    e["name"] = name;
    eval.push_back(std::move(e));
  }
  return json{{"data", {{"train", data_to_json(cfg.train_data)}, {"test", data_to_json(cfg.test_data)}}},
              {"net",
               {{"arch", arch_name(cfg.run.net.arch)},
                {"in_channels", cfg.run.net.in_channels},
                {"in_h", cfg.run.net.in_h},
                {"in_w", cfg.run.net.in_w},
                {"input_dim", cfg.run.net.input_dim},
                {"layers", cfg.run.net.layers},
                {"k", cfg.run.net.k},
                {"d_s", cfg.run.net.d_s},
                {"sigma", cfg.run.net.sigma}}},
              {"objective",
               {{"variant", variant_name(cfg.run.objective.variant)},
                {"gamma", cfg.run.objective.gamma},
                {"lambda", cfg.run.objective.lambda},
                {"beta", cfg.run.objective.beta},
                {"trades_beta", cfg.run.objective.trades_beta}}},
              {"train_attack", attack_to_json(cfg.run.train_attack)},
              {"val_attack", attack_to_json(cfg.run.val_attack)},
              {"attack", attack_to_json(cfg.attack)},
              {"eval_attacks", std::move(eval)},
              {"opt",
               {{"lr", cfg.run.opt.lr},
                {"momentum", cfg.run.opt.momentum},
                {"weight_decay", cfg.run.opt.weight_decay},
                {"lr_milestones", cfg.run.opt.lr_milestones},
                {"lr_gamma", cfg.run.opt.lr_gamma}}},
              {"epochs", cfg.run.epochs},
              {"batch_size", cfg.run.batch_size},
              {"val_split", cfg.run.val_split},
              {"seed", cfg.run.seed}};
}

nlohmann::json resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  CADV_CHECK(in.good(), "cannot open config: ", path);
  json user;
  try {
    user = json::parse(in);
  } catch (const json::parse_error& e) {
    fail("cannot parse config ", path, ": ", e.what());
  }
  json resolved = default_config_json();
  merge_config(resolved, user);
  for (const std::string& o : overrides) apply_override(resolved, o);
  return resolved;
}

}  // namespace cadv
