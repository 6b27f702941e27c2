#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "cadv/data.hpp"
#include "cadv/harness.hpp"

namespace cadv {

// Where a dataset comes from. "glyphs" and "synth" generate in-process;
// "idx" reads an image/label pair; "file" reads a saved container. Relative
// idx/file paths resolve against $CADV_DATA_DIR when it is set.
struct DataSpec {
  std::string kind = "glyphs";
  int64_t n = 10000;
  uint64_t seed = 1;
  std::string path;            // kind == file
  std::string images, labels;  // kind == idx
  SyntheticCausalConfig synth;

  void validate() const;
};

Dataset materialize(const DataSpec& spec);

// Everything a run needs: train/test data sources, the RunConfig consumed by
// train(), and the standalone attack used by the attack/diagnose verbs.
struct FullConfig {
  DataSpec train_data;
  DataSpec test_data;
  RunConfig run;
  AttackConfig attack;
};

// The complete schema with default values. Every legal config key exists
// here; user files and --set overrides may only touch keys present in it.
nlohmann::json default_config_json();

// Recursively folds `user` into `base` (the canonical schema). Unknown keys
// and JSON-type mismatches throw. Arrays of objects merge element-wise
// against base[0] as the template; scalar arrays are replaced wholesale.
void merge_config(nlohmann::json& base, const nlohmann::json& user,
                  const std::string& prefix = "");

// Applies one "dotted.key=value" override in place. The key must name an
// existing scalar/array/object; the value text is parsed as JSON, falling
// back to a plain string.
void apply_override(nlohmann::json& j, const std::string& spec);

FullConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const FullConfig& cfg);

// Reads a config file, folds it into the defaults, applies overrides in
// order, and returns the fully-resolved document (ready for config_from_json
// and for the resolved-config copy written next to run outputs).
nlohmann::json resolve_config(const std::string& path,
                              const std::vector<std::string>& overrides);

}  // namespace cadv
