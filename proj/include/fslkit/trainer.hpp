#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fslkit/adapter.hpp"
#include "fslkit/autodiff.hpp"
#include "fslkit/backbone.hpp"
#include "fslkit/episodes.hpp"
#include "fslkit/image.hpp"
#include "fslkit/metric.hpp"

namespace fsl {

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 5e-4;
  double momentum = 0.9;  // Nesterov
  int lr_step = 40;
  double lr_gamma = 0.5;
  double loss_lambda = 0.1;  // weight of the contrastive term
  int episodes_per_epoch = 100;
  int epochs = 80;
  int n_way = 5;
  int m_shot = 5;
  int queries_per_class = 15;
  double beta = 1.0;
  TaskCovMode cov_mode = TaskCovMode::within_class;
  std::uint64_t seed = 0;
  bool contrastive_centers_include_queries = true;
  bool adapter_bias = false;
  int pretrain_epochs = 0;
  int pretrain_batch = 16;

  void validate() const;  // throws ConfigError
};

// Every trainable weight of the pipeline.
struct ModelParams {
  BackboneConfig backbone;
  ConvBackboneParams conv;  // empty on the precomputed path
  AdapterParams adapter;

  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

ModelParams init_model(const BackboneConfig& backbone, std::uint64_t seed,
                       bool adapter_bias = false);

struct ModelVars {
  BackboneKind kind = BackboneKind::precomputed;
  ConvBackboneVars conv;
  AdapterVars adapter;
};

ModelVars lift_model(ad::Tape& tape, const ModelParams& params);

// Leaf-to-tensor bindings, ordered like named_tensors().
std::vector<std::pair<ad::Var, Tensor*>> trainable_bindings(const ModelVars& vars,
                                                            ModelParams& params);

// Episode inputs, featurized for the active backbone: raw embedding rows
// for the precomputed path, image batches for the conv path.
struct EpisodeBatch {
  bool has_images = false;
  Tensor support_inputs;
  Tensor query_inputs;
  std::vector<int> support_labels;
  std::vector<int> query_labels;
};

EpisodeBatch featurize_episode(const Episode& episode, const DatasetManifest& manifest,
                               const BackboneConfig& backbone, const PreprocessSpec& prep);

struct LossBreakdown {
  double total = 0.0;
  double query_ce = 0.0;     // term 1
  double contrastive = 0.0;  // term 2, before weighting
  double query_accuracy = 0.0;
};

// Combined episodic loss: mean query cross-entropy through the full
// pipeline, plus loss_lambda times the contrastive term in which the whole
// episode is transformed jointly and every instance is classified against
// the class centers of the transformed set.
ad::Var episode_loss_vars(ad::Tape& tape, const EpisodeBatch& batch, const ModelVars& model,
                          const TrainConfig& cfg, LossBreakdown* detail = nullptr);

// Mean cross-entropy of rows classified by softmax over negated distances.
ad::Var cross_entropy_from_distances(ad::Tape& tape, ad::Var distances,
                                     const std::vector<int>& labels);

// v <- mu v - lr g;  theta <- theta + mu v - lr g, with classic L2 decay
// folded into g. Velocities are keyed by parameter name.
class NesterovSgd {
public:
  NesterovSgd(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(double lr, const std::vector<std::pair<std::string, Tensor*>>& params,
            const std::vector<Tensor>& grads);

  const std::unordered_map<std::string, Tensor>& velocities() const { return velocity_; }
  void restore_velocity(const std::string& name, Tensor v) { velocity_[name] = std::move(v); }

private:
  double momentum_;
  double weight_decay_;
  std::unordered_map<std::string, Tensor> velocity_;
};

// Versioned little-endian binary snapshot with a self-describing tensor
// table; round-trips bit-exactly.
struct Checkpoint {
  std::uint32_t epoch = 0;
  std::uint64_t global_step = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

Checkpoint make_checkpoint(const ModelParams& params, const NesterovSgd& opt,
                           std::uint32_t epoch, std::uint64_t global_step,
                           std::uint64_t config_hash);
void restore_from_checkpoint(const Checkpoint& ckpt, ModelParams& params, NesterovSgd& opt);

struct EpochLogRow {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_train_acc = 0.0;
  double lr = 0.0;
};

std::string log_to_csv(const std::vector<EpochLogRow>& rows, const std::string& config_echo);

double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct TrainResult {
  ModelParams params;
  Checkpoint checkpoint;
  std::vector<EpochLogRow> log;  // one row per epoch run in this call
};

// Episodic meta-training over the meta_train split. Fully deterministic
// given (manifest, cfg): per-episode seeds derive from cfg.seed and the
// global step, so resuming from a checkpoint continues the exact stream.
TrainResult train(const DatasetManifest& manifest, const PreprocessSpec& prep,
                  const BackboneConfig& backbone, const TrainConfig& cfg,
                  std::uint64_t config_hash = 0, const Checkpoint* resume = nullptr);

}  // namespace fsl
