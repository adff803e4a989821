#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fslkit/episodes.hpp"
#include "fslkit/image.hpp"
#include "fslkit/metric.hpp"
#include "fslkit/trainer.hpp"

namespace fsl {

struct EvalConfig {
  int n_way = 5;
  int m_shot = 5;
  int queries_per_class = 15;  // <= 0 takes all remaining samples per class
  int n_episodes = 600;
  std::uint64_t seed = 0;
  HeadKind head = HeadKind::mahalanobis;
  double beta = 1.0;
  TaskCovMode cov_mode = TaskCovMode::within_class;
  Split split = Split::meta_test;

  void validate() const;
};

struct EvalReport {
  EvalConfig config;
  std::vector<double> per_episode;  // query-averaged accuracy per episode
  double mean_accuracy = 0.0;
  double ci95_half_width = 0.0;  // 1.96 * sample std / sqrt(n)
  std::uint64_t episode_stream_hash = 0;

  // JSON document with the config echoed in; `config_echo` may carry the
  // full run configuration and is embedded verbatim when valid JSON.
  std::string to_json(const std::string& config_echo = "") const;
  static std::string csv_header();
  std::string to_csv_row() const;
};

// The evaluation protocol: n_episodes tasks drawn with seeds
// seed..seed+n-1 from the chosen split, accuracy averaged per episode and
// then across episodes. Episodes are independent, so they run on a worker
// pool (capped by FSL_THREADS); results are keyed by episode index and the
// report is identical for any worker count.
EvalReport evaluate(const ModelParams& params, const DatasetManifest& manifest,
                    const EvalConfig& cfg, const PreprocessSpec& prep = {});

struct HeadComparison {
  EvalReport mahalanobis;
  EvalReport euclidean;
};

// Both heads consume bit-identical episode streams (verified by hash).
HeadComparison compare_heads(const ModelParams& params, const DatasetManifest& manifest,
                             EvalConfig base, const PreprocessSpec& prep = {});

std::string comparison_table(const HeadComparison& cmp);
std::string comparison_json(const HeadComparison& cmp, const std::string& config_echo = "");

// Mean and 95% half-width; exposed for cross-checking in tests.
std::pair<double, double> mean_and_ci95(const std::vector<double>& values);

}  // namespace fsl
