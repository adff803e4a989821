#include "fslkit/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "fslkit/adapter.hpp"
#include "fslkit/errors.hpp"

using ordered_json = nlohmann::ordered_json;

namespace fsl {

void EvalConfig::validate() const {
  if (n_way < 2) throw ConfigError("eval n_way must be >= 2");
  if (m_shot < 1) throw ConfigError("eval m_shot must be >= 1");
  if (n_episodes < 1) throw ConfigError("eval episodes must be >= 1");
  if (beta <= 0.0) throw ConfigError("beta must be > 0");
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_episode(std::uint64_t h, const Episode& ep) {
  for (const auto& name : ep.class_names) h = fnv1a(h, name.data(), name.size());
  for (const auto& item : ep.support) {
    h = fnv1a(h, item.sample.id.data(), item.sample.id.size());
    h = fnv1a(h, &item.label, sizeof(item.label));
  }
  for (const auto& item : ep.query) {
    h = fnv1a(h, item.sample.id.data(), item.sample.id.size());
    h = fnv1a(h, &item.label, sizeof(item.label));
  }
  return h;
}

int worker_count(int n_jobs) {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap < 1) cap = 1;
  if (const char* env = std::getenv("FSL_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) cap = std::min(cap, v);
  }
  return std::min(cap, n_jobs);
}

double run_episode(const ModelParams& params, const DatasetManifest& manifest,
                   const EvalConfig& cfg, const PreprocessSpec& prep, const Episode& episode) {
  const EpisodeBatch batch = featurize_episode(episode, manifest, params.backbone, prep);

  EmbeddingBatch support, queries;
  if (batch.has_images) {
    support.embeddings = conv_embed(batch.support_inputs, params.conv);
    queries.embeddings = conv_embed(batch.query_inputs, params.conv);
  } else {
    support.embeddings = batch.support_inputs;
    queries.embeddings = batch.query_inputs;
  }
  support.labels = batch.support_labels;
  queries.labels = batch.query_labels;

  const AdaptedSet adapted = adapt(support, queries, params.adapter);
  const TaskStatistics stats = estimate_statistics(adapted.support, cfg.beta, cfg.cov_mode);

  std::size_t hits = 0;
  const Tensor& q = adapted.queries.embeddings;
  Tensor row({1, q.cols()});
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < q.cols(); ++j) row.at(0, j) = q.at(i, j);
    const Prediction pred = classify(row, stats, cfg.head);
    if (pred.argmax == batch.query_labels[i]) hits++;
  }
  return q.rows() ? static_cast<double>(hits) / static_cast<double>(q.rows()) : 0.0;
}

}  // namespace

std::pair<double, double> mean_and_ci95(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n == 0) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  if (n < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, 1.96 * sd / std::sqrt(static_cast<double>(n))};
}

EvalReport evaluate(const ModelParams& params, const DatasetManifest& manifest,
                    const EvalConfig& cfg, const PreprocessSpec& prep) {
  cfg.validate();

  // Sample the whole stream up front; it is cheap, deterministic, and
  // gives a stable content hash regardless of worker scheduling.
  std::vector<Episode> episodes;
  episodes.reserve(cfg.n_episodes);
  std::uint64_t stream_hash = 0xcbf29ce484222325ULL;
  for (int e = 0; e < cfg.n_episodes; ++e) {
    episodes.push_back(sample_episode(manifest, cfg.split, cfg.n_way, cfg.m_shot,
                                      cfg.queries_per_class,
                                      cfg.seed + static_cast<std::uint64_t>(e)));
    stream_hash = hash_episode(stream_hash, episodes.back());
  }

  std::vector<double> accuracy(episodes.size(), 0.0);
  const int workers = worker_count(cfg.n_episodes);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&]() {
    for (;;) {
      const std::size_t e = next.fetch_add(1);
      if (e >= episodes.size()) return;
      try {
        accuracy[e] = run_episode(params, manifest, cfg, prep, episodes[e]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport report;
  report.config = cfg;
  report.per_episode = std::move(accuracy);
  std::tie(report.mean_accuracy, report.ci95_half_width) = mean_and_ci95(report.per_episode);
  report.episode_stream_hash = stream_hash;
  return report;
}

namespace {

ordered_json report_json(const EvalReport& r, const std::string& config_echo) {
  ordered_json j;
  j["n_episodes"] = r.config.n_episodes;
  j["mean_accuracy"] = r.mean_accuracy;
  j["ci95_half_width"] = r.ci95_half_width;
  j["split"] = split_name(r.config.split);
  j["head"] = r.config.head == HeadKind::mahalanobis ? "mahalanobis" : "euclidean";
  j["n_way"] = r.config.n_way;
  j["m_shot"] = r.config.m_shot;
  j["queries_per_class"] = r.config.queries_per_class;
  j["seed"] = r.config.seed;
  j["beta"] = r.config.beta;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(r.episode_stream_hash));
  j["episode_stream_hash"] = hash;
  j["per_episode_accuracies"] = r.per_episode;
  if (!config_echo.empty()) {
    j["config"] = ordered_json::parse(config_echo, nullptr, false);
    if (j["config"].is_discarded()) j["config"] = config_echo;
  }
  return j;
}

}  // namespace

std::string EvalReport::to_json(const std::string& config_echo) const {
  return report_json(*this, config_echo).dump(2) + "\n";
}

std::string EvalReport::csv_header() {
  return "n_way,m_shot,queries_per_class,n_episodes,seed,head,split,mean_accuracy,"
         "ci95_half_width\n";
}

std::string EvalReport::to_csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%llu,%s,%s,%.17g,%.17g\n", config.n_way,
                config.m_shot, config.queries_per_class, config.n_episodes,
                static_cast<unsigned long long>(config.seed),
                config.head == HeadKind::mahalanobis ? "mahalanobis" : "euclidean",
                split_name(config.split).c_str(), mean_accuracy, ci95_half_width);
  return buf;
}

HeadComparison compare_heads(const ModelParams& params, const DatasetManifest& manifest,
                             EvalConfig base, const PreprocessSpec& prep) {
  HeadComparison cmp;
  base.head = HeadKind::mahalanobis;
  cmp.mahalanobis = evaluate(params, manifest, base, prep);
  base.head = HeadKind::euclidean;
  cmp.euclidean = evaluate(params, manifest, base, prep);
  if (cmp.mahalanobis.episode_stream_hash != cmp.euclidean.episode_stream_hash) {
    throw Error("head comparison episode streams diverged");
  }
  return cmp;
}

std::string comparison_table(const HeadComparison& cmp) {
  std::ostringstream os;
  char buf[128];
  os << "head         mean_accuracy  ci95_half_width\n";
  std::snprintf(buf, sizeof(buf), "mahalanobis  %-14.4f %.4f\n", cmp.mahalanobis.mean_accuracy,
                cmp.mahalanobis.ci95_half_width);
  os << buf;
  std::snprintf(buf, sizeof(buf), "euclidean    %-14.4f %.4f\n", cmp.euclidean.mean_accuracy,
                cmp.euclidean.ci95_half_width);
  os << buf;
  return os.str();
}

std::string comparison_json(const HeadComparison& cmp, const std::string& config_echo) {
  ordered_json j;
  j["mahalanobis"] = report_json(cmp.mahalanobis, "");
  j["euclidean"] = report_json(cmp.euclidean, "");
  j["mahalanobis"].erase("per_episode_accuracies");
  j["euclidean"].erase("per_episode_accuracies");
  if (!config_echo.empty()) {
    j["config"] = ordered_json::parse(config_echo, nullptr, false);
    if (j["config"].is_discarded()) j["config"] = config_echo;
  }
  return j.dump(2) + "\n";
}

}  // namespace fsl
