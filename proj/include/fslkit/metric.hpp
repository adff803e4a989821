#pragma once

#include <vector>

#include "fslkit/autodiff.hpp"
#include "fslkit/backbone.hpp"
#include "fslkit/tensor.hpp"

namespace fsl {

// How the task covariance pools deviations: around each sample's own class
// mean (default) or around the global mean of the support set.
enum class TaskCovMode { within_class, task_mean };

// Euclidean forces every class matrix to the identity; kept for head
// comparisons.
enum class HeadKind { mahalanobis, euclidean };

// Per-episode statistics of the adapted support set.
struct TaskStatistics {
  Tensor mu;                         // [N x d] class means
  std::vector<Tensor> sigma_class;   // N class covariances [d x d]
  Tensor sigma_task;                 // pooled task covariance [d x d]
  std::vector<double> lambda_blend;  // |S_n| / (|S_n| + 1)
  std::vector<Tensor> q_reg;         // blended regularized matrices, SPD
  double beta = 1.0;

  std::size_t n_classes() const { return q_reg.size(); }
  std::size_t dim() const { return mu.cols(); }
};

struct Prediction {
  std::vector<double> probabilities;  // simplex over the N classes
  std::vector<double> distances;      // squared Mahalanobis distances
  int argmax = 0;                     // ties resolve to the lowest index
};

// Means, covariances and the regularized blend
//   Q_n = lambda_n Sigma_n + (1 - lambda_n) Sigma_task + beta I
// from labeled support rows. Labels must cover 0..N-1 with at least one
// sample each. Every Q_n is verified by a Cholesky factorization.
TaskStatistics estimate_statistics(const EmbeddingBatch& support, double beta,
                                   TaskCovMode mode = TaskCovMode::within_class);

// 1/2 (x - mu)^T Q^-1 (x - mu), solved through the factorization. Accepts
// row or column vectors of length d.
double mahalanobis_sq(const Tensor& x, const Tensor& mu, const Tensor& q);

// Softmax over negated distances of one query row against all classes.
Prediction classify(const Tensor& query_row, const TaskStatistics& stats,
                    HeadKind head = HeadKind::mahalanobis);

// ---- tape-level mirror used by the trainer -------------------------------

struct TaskStatsVars {
  ad::Var mu;  // [N x d]
  std::vector<ad::Var> sigma_class;
  ad::Var sigma_task;
  std::vector<double> lambda_blend;
  std::vector<ad::Var> q_reg;
};

TaskStatsVars estimate_statistics_vars(ad::Tape& tape, ad::Var support,
                                       const std::vector<int>& labels, int n_classes,
                                       double beta,
                                       TaskCovMode mode = TaskCovMode::within_class);

// Squared distances of every row against every class center: [rows x N].
// `centers` defaults to the statistics' means but may be overridden (the
// contrastive loss classifies against centers of the full transformed set).
ad::Var class_distances_vars(ad::Tape& tape, ad::Var rows, ad::Var centers,
                             const TaskStatsVars& stats,
                             HeadKind head = HeadKind::mahalanobis);

}  // namespace fsl
