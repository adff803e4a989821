#pragma once

#include <string>

#include "fslkit/config.hpp"
#include "fslkit/eval.hpp"

namespace fsl {

// Command bodies shared by the CLI and the Python module. Each writes its
// artifacts under cfg.out_dir and returns what it produced.

struct SynthOutputs {
  std::string manifest_path;
  std::string embeddings_path;
  std::string split_path;
};

SynthOutputs run_synth(const RunConfig& cfg);

struct TrainOutputs {
  std::string checkpoint_path;
  std::string log_path;
  double final_mean_loss = 0.0;
  double final_train_accuracy = 0.0;
  int epochs = 0;
};

TrainOutputs run_train(const RunConfig& cfg, const std::string& resume_path = "");

struct EvalOutputs {
  std::string report_json_path;
  std::string report_csv_path;
  EvalReport report;
};

EvalOutputs run_eval(const RunConfig& cfg, const std::string& checkpoint_path);

struct CompareOutputs {
  std::string json_path;
  HeadComparison comparison;
};

// Empty checkpoint path compares heads on a freshly initialized model.
CompareOutputs run_compare(const RunConfig& cfg, const std::string& checkpoint_path = "");

}  // namespace fsl
