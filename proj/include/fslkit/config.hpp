#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fslkit/backbone.hpp"
#include "fslkit/episodes.hpp"
#include "fslkit/eval.hpp"
#include "fslkit/image.hpp"
#include "fslkit/trainer.hpp"

namespace fsl {

// Whole-run configuration parsed from a JSON file plus --set overrides.
// Every field is validated before any computation starts and unknown keys
// are rejected. `echo` holds the canonical JSON (defaults merged in) that
// is embedded into output artifacts; `hash()` fingerprints it.
struct RunConfig {
  BackboneConfig backbone;
  PreprocessSpec preprocess;
  TrainConfig train;
  EvalConfig eval;
  SyntheticSpec synth;
  double synth_train_fraction = 0.5;

  std::string manifest_path;
  std::string split_path;
  std::string out_dir = "out";

  std::string echo;
  std::uint64_t hash() const;

  void require_data() const;  // manifest + split present, else ConfigError
};

// `overrides` entries look like "train.learning_rate=0.001"; values parse
// as JSON scalars, falling back to strings.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// Parses from an in-memory JSON document (used by the Python bindings).
RunConfig parse_run_config(const std::string& json_text, const std::string& source_name);

}  // namespace fsl
