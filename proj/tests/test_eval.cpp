#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "fslkit/errors.hpp"
#include "fslkit/eval.hpp"
#include "fslkit/rng.hpp"
#include "test_support.hpp"

using namespace fsl;

namespace {

DatasetManifest synthetic_dataset(int classes, int dim, double mean_scale, int samples,
                                  std::uint64_t seed, bool isotropic = true,
                                  double condition = 1.0) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.dim = dim;
  spec.mean_scale = mean_scale;
  spec.samples_per_class = samples;
  spec.seed = seed;
  spec.isotropic = isotropic;
  spec.condition = condition;
  DatasetManifest m = generate_synthetic(spec);
  m.apply_split(fraction_split(m, 0.5));
  return m;
}

ModelParams zero_adapter_model(int dim) {
  BackboneConfig bb;
  bb.kind = BackboneKind::precomputed;
  bb.embed_dim = static_cast<std::size_t>(dim);
  ModelParams params = init_model(bb, 1, false);
  for (double& v : params.adapter.w_v.data()) v = 0.0;  // adaptation becomes the identity
  return params;
}

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("ci computation matches a two-pass oracle") {
  Rng rng(7);
  std::vector<double> values;
  for (int i = 0; i < 321; ++i) values.push_back(rng.uniform());
  const auto [mean, half] = mean_and_ci95(values);

  double m2 = 0.0;
  for (double v : values) m2 += v;
  m2 /= values.size();
  double ss = 0.0;
  for (double v : values) ss += (v - m2) * (v - m2);
  const double sd = std::sqrt(ss / (values.size() - 1));
  CHECK(mean == doctest::Approx(m2).epsilon(1e-14));
  CHECK(half == doctest::Approx(1.96 * sd / std::sqrt(321.0)).epsilon(1e-14));

  CHECK(mean_and_ci95({0.5}).second == 0.0);
}

TEST_CASE("widely separated classes give perfect accuracy with zero ci") {
  const DatasetManifest m = synthetic_dataset(6, 6, 1000.0, 30, 3);
  const ModelParams params = zero_adapter_model(6);
  EvalConfig cfg;
  cfg.n_way = 3;
  cfg.m_shot = 2;
  cfg.queries_per_class = 5;
  cfg.n_episodes = 40;
  cfg.seed = 20;
  const EvalReport report = evaluate(params, m, cfg);
  CHECK(report.mean_accuracy == 1.0);
  CHECK(report.ci95_half_width == 0.0);
  CHECK(report.per_episode.size() == 40);
}

TEST_CASE("indistinguishable classes score at chance level") {
  const DatasetManifest m = synthetic_dataset(12, 6, 0.0, 40, 11);
  const ModelParams params = zero_adapter_model(6);
  EvalConfig cfg;
  cfg.n_way = 5;
  cfg.m_shot = 1;
  cfg.queries_per_class = 6;
  cfg.n_episodes = 600;
  cfg.seed = 50;
  const EvalReport report = evaluate(params, m, cfg);
  CHECK(report.mean_accuracy > 0.2 - 0.02);
  CHECK(report.mean_accuracy < 0.2 + 0.02);
}

TEST_CASE("episode shape at eval time is decoupled from training shape") {
  // Train 3-way, evaluate 5-way: the "N_train, N_test" settings differ.
  const DatasetManifest m = synthetic_dataset(12, 4, 3.0, 20, 13);
  BackboneConfig bb;
  bb.kind = BackboneKind::precomputed;
  bb.embed_dim = 4;
  TrainConfig tc;
  tc.epochs = 1;
  tc.episodes_per_epoch = 5;
  tc.n_way = 3;
  tc.m_shot = 2;
  tc.queries_per_class = 3;
  tc.learning_rate = 0.01;
  tc.seed = 2;
  const TrainResult trained = train(m, PreprocessSpec{}, bb, tc);

  EvalConfig cfg;
  cfg.n_way = 5;
  cfg.m_shot = 1;
  cfg.queries_per_class = 4;
  cfg.n_episodes = 12;
  const EvalReport report = evaluate(trained.params, m, cfg);
  CHECK(report.per_episode.size() == 12);
  for (double acc : report.per_episode) {
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
}

TEST_CASE("evaluation is deterministic and thread-count independent") {
  const DatasetManifest m = synthetic_dataset(8, 5, 2.0, 24, 17);
  const ModelParams params = init_model(
      [] {
        BackboneConfig bb;
        bb.kind = BackboneKind::precomputed;
        bb.embed_dim = 5;
        return bb;
      }(),
      21, false);
  EvalConfig cfg;
  cfg.n_way = 3;
  cfg.m_shot = 2;
  cfg.queries_per_class = 4;
  cfg.n_episodes = 50;
  cfg.seed = 99;

  setenv("FSL_THREADS", "1", 1);
  const EvalReport serial = evaluate(params, m, cfg);
  setenv("FSL_THREADS", "4", 1);
  const EvalReport parallel = evaluate(params, m, cfg);
  unsetenv("FSL_THREADS");

  CHECK(serial.episode_stream_hash == parallel.episode_stream_hash);
  REQUIRE(serial.per_episode.size() == parallel.per_episode.size());
  for (std::size_t i = 0; i < serial.per_episode.size(); ++i) {
    CHECK(serial.per_episode[i] == parallel.per_episode[i]);
  }
  CHECK(serial.to_json() == parallel.to_json());
}

TEST_CASE("compare_heads consumes identical episode streams") {
  const DatasetManifest m = synthetic_dataset(8, 5, 2.0, 24, 19);
  const ModelParams params = zero_adapter_model(5);
  EvalConfig cfg;
  cfg.n_way = 3;
  cfg.m_shot = 3;
  cfg.queries_per_class = 4;
  cfg.n_episodes = 30;
  const HeadComparison cmp = compare_heads(params, m, cfg);
  CHECK(cmp.mahalanobis.episode_stream_hash == cmp.euclidean.episode_stream_hash);
  CHECK(cmp.mahalanobis.config.head == HeadKind::mahalanobis);
  CHECK(cmp.euclidean.config.head == HeadKind::euclidean);
}

TEST_CASE("isotropic equal-covariance data keeps both heads close") {
  // Enough shots for the covariance estimate to settle near a multiple of
  // the identity; the ridge absorbs the residual estimation noise.
  const DatasetManifest m = synthetic_dataset(10, 4, 2.2, 60, 23);
  const ModelParams params = zero_adapter_model(4);
  EvalConfig cfg;
  cfg.n_way = 5;
  cfg.m_shot = 20;
  cfg.queries_per_class = 10;
  cfg.n_episodes = 100;
  cfg.beta = 4.0;
  const HeadComparison cmp = compare_heads(params, m, cfg);
  const double gap = std::fabs(cmp.mahalanobis.mean_accuracy - cmp.euclidean.mean_accuracy);
  CHECK(gap <= cmp.mahalanobis.ci95_half_width + cmp.euclidean.ci95_half_width);
}

TEST_CASE("one-shot tasks make the heads agree almost everywhere") {
  // With M = 1 every Q collapses to beta I, so the argmax ordering is the
  // euclidean one regardless of beta.
  const DatasetManifest m = synthetic_dataset(10, 5, 1.0, 12, 29);
  ModelParams params = zero_adapter_model(5);
  EvalConfig cfg;
  cfg.n_way = 4;
  cfg.m_shot = 1;
  cfg.queries_per_class = 5;
  cfg.n_episodes = 150;
  cfg.beta = 2.5;
  const HeadComparison cmp = compare_heads(params, m, cfg);
  std::size_t agree = 0;
  for (std::size_t e = 0; e < cmp.mahalanobis.per_episode.size(); ++e) {
    if (cmp.mahalanobis.per_episode[e] == cmp.euclidean.per_episode[e]) agree++;
  }
  CHECK(agree == cmp.mahalanobis.per_episode.size());
}

TEST_CASE("eval split selection reaches the meta_train classes") {
  const DatasetManifest m = synthetic_dataset(8, 4, 2.0, 16, 31);
  const ModelParams params = zero_adapter_model(4);
  EvalConfig cfg;
  cfg.n_way = 2;
  cfg.m_shot = 1;
  cfg.queries_per_class = 3;
  cfg.n_episodes = 5;
  cfg.split = Split::meta_train;
  const EvalReport report = evaluate(params, m, cfg);
  CHECK(report.per_episode.size() == 5);
}

TEST_CASE("report json and csv carry the protocol fields") {
  const DatasetManifest m = synthetic_dataset(6, 4, 2.0, 12, 37);
  const ModelParams params = zero_adapter_model(4);
  EvalConfig cfg;
  cfg.n_way = 2;
  cfg.m_shot = 1;
  cfg.queries_per_class = 2;
  cfg.n_episodes = 8;
  const EvalReport report = evaluate(params, m, cfg);
  const std::string json = report.to_json("{\"hello\":1}");
  CHECK(json.find("\"n_episodes\": 8") != std::string::npos);
  CHECK(json.find("per_episode_accuracies") != std::string::npos);
  CHECK(json.find("episode_stream_hash") != std::string::npos);
  CHECK(json.find("\"config\"") != std::string::npos);
  const std::string csv = EvalReport::csv_header() + report.to_csv_row();
  CHECK(csv.find("mean_accuracy") != std::string::npos);
  CHECK(csv.find("mahalanobis") != std::string::npos);
}

TEST_SUITE_END();
