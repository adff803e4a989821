#include "fslkit/metric.hpp"

#include <algorithm>
#include <cmath>

#include "fslkit/errors.hpp"
#include "fslkit/linalg.hpp"

namespace fsl {

namespace {

std::vector<std::vector<std::size_t>> group_by_label(const std::vector<int>& labels,
                                                     int n_classes) {
  std::vector<std::vector<std::size_t>> groups(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) {
      throw DataError("support label " + std::to_string(labels[i]) + " outside 0.." +
                      std::to_string(n_classes - 1));
    }
    groups[labels[i]].push_back(i);
  }
  for (int n = 0; n < n_classes; ++n) {
    if (groups[n].empty()) {
      throw DataError("support set has no samples for class " + std::to_string(n));
    }
  }
  return groups;
}

Tensor as_row(const Tensor& v) {
  if (v.ndim() == 1) return Tensor({1, v.size()}, v.data());
  if (v.ndim() == 2 && v.rows() == 1) return v;
  if (v.ndim() == 2 && v.cols() == 1) return transpose(v);
  throw DimensionError("expected a length-d vector, got " + v.shape_string());
}

}  // namespace

TaskStatistics estimate_statistics(const EmbeddingBatch& support, double beta,
                                   TaskCovMode mode) {
  if (beta <= 0.0) throw ConfigError("beta must be > 0");
  const Tensor& x = support.embeddings;
  const std::size_t s = x.rows(), d = x.cols();
  if (s == 0) throw DataError("estimate_statistics on an empty support set");
  if (support.labels.size() != s) {
    throw DimensionError("support labels not row-aligned with embeddings");
  }
  const int n_classes = 1 + *std::max_element(support.labels.begin(), support.labels.end());
  auto groups = group_by_label(support.labels, n_classes);

  TaskStatistics st;
  st.beta = beta;
  st.mu = Tensor({static_cast<std::size_t>(n_classes), d});
  st.sigma_task = Tensor({d, d});
  Tensor global_mu({1, d});

  for (int n = 0; n < n_classes; ++n) {
    for (std::size_t i : groups[n])
      for (std::size_t j = 0; j < d; ++j) st.mu.at(n, j) += x.at(i, j);
    for (std::size_t j = 0; j < d; ++j) st.mu.at(n, j) /= static_cast<double>(groups[n].size());
  }
  if (mode == TaskCovMode::task_mean) {
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < d; ++j) global_mu.at(0, j) += x.at(i, j);
    for (std::size_t j = 0; j < d; ++j) global_mu.at(0, j) /= static_cast<double>(s);
  }

  for (int n = 0; n < n_classes; ++n) {
    const auto& g = groups[n];
    Tensor sigma({d, d});
    for (std::size_t i : g) {
      for (std::size_t a = 0; a < d; ++a) {
        const double da = x.at(i, a) - st.mu.at(n, a);
        for (std::size_t b = 0; b < d; ++b) {
          sigma.at(a, b) += da * (x.at(i, b) - st.mu.at(n, b));
        }
      }
    }
    for (double& v : sigma.data()) v /= static_cast<double>(g.size());
    st.sigma_class.push_back(std::move(sigma));
    st.lambda_blend.push_back(static_cast<double>(g.size()) /
                              static_cast<double>(g.size() + 1));
  }

  // Pooled task covariance over every support deviation.
  for (std::size_t i = 0; i < s; ++i) {
    const int n = support.labels[i];
    for (std::size_t a = 0; a < d; ++a) {
      const double da = mode == TaskCovMode::within_class
                            ? x.at(i, a) - st.mu.at(n, a)
                            : x.at(i, a) - global_mu.at(0, a);
      for (std::size_t b = 0; b < d; ++b) {
        const double db = mode == TaskCovMode::within_class
                              ? x.at(i, b) - st.mu.at(n, b)
                              : x.at(i, b) - global_mu.at(0, b);
        st.sigma_task.at(a, b) += da * db;
      }
    }
  }
  for (double& v : st.sigma_task.data()) v /= static_cast<double>(s);

  for (int n = 0; n < n_classes; ++n) {
    const double lambda = st.lambda_blend[n];
    Tensor q = add(add(scale(st.sigma_class[n], lambda), scale(st.sigma_task, 1.0 - lambda)),
                   scale(Tensor::identity(d), beta));
    cholesky_factor_with_jitter(q);  // verifies SPD, jitters in place if needed
    st.q_reg.push_back(std::move(q));
  }
  return st;
}

double mahalanobis_sq(const Tensor& x, const Tensor& mu, const Tensor& q) {
  const Tensor xr = as_row(x), mr = as_row(mu);
  if (xr.cols() != mr.cols() || q.rows() != xr.cols()) {
    throw DimensionError("mahalanobis_sq extents disagree");
  }
  Tensor diff = sub(xr, mr);
  Tensor qc = q;
  Tensor lower = cholesky_factor_with_jitter(qc);
  Tensor z = cholesky_solve_factored(lower, transpose(diff));
  double dist = 0.0;
  for (std::size_t j = 0; j < diff.cols(); ++j) dist += diff.at(0, j) * z.at(j, 0);
  return std::max(0.5 * dist, 0.0);
}

Prediction classify(const Tensor& query_row, const TaskStatistics& stats, HeadKind head) {
  const Tensor q = as_row(query_row);
  const std::size_t n = stats.n_classes(), d = stats.dim();
  if (q.cols() != d) throw DimensionError("query width differs from statistics dimension");

  Prediction pred;
  pred.distances.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    Tensor mu({1, d});
    for (std::size_t j = 0; j < d; ++j) mu.at(0, j) = stats.mu.at(c, j);
    if (head == HeadKind::euclidean) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double delta = q.at(0, j) - mu.at(0, j);
        s += delta * delta;
      }
      pred.distances[c] = 0.5 * s;
    } else {
      pred.distances[c] = mahalanobis_sq(q, mu, stats.q_reg[c]);
    }
  }

  Tensor logits({1, n});
  for (std::size_t c = 0; c < n; ++c) logits.at(0, c) = -pred.distances[c];
  Tensor probs = ad::softmax_rows_value(logits);
  pred.probabilities.assign(probs.data().begin(), probs.data().end());

  pred.argmax = 0;
  for (std::size_t c = 1; c < n; ++c) {
    if (pred.distances[c] < pred.distances[pred.argmax]) pred.argmax = static_cast<int>(c);
  }
  return pred;
}

TaskStatsVars estimate_statistics_vars(ad::Tape& tape, ad::Var support,
                                       const std::vector<int>& labels, int n_classes,
                                       double beta, TaskCovMode mode) {
  if (beta <= 0.0) throw ConfigError("beta must be > 0");
  const Tensor& x = tape.value(support);
  const std::size_t s = x.rows(), d = x.cols();
  if (labels.size() != s) throw DimensionError("labels not row-aligned with support rows");
  auto groups = group_by_label(labels, n_classes);

  TaskStatsVars st;
  std::vector<ad::Var> class_mu(n_classes);
  std::vector<ad::Var> class_dev(n_classes);
  for (int n = 0; n < n_classes; ++n) {
    ad::Var rows = tape.gather_rows(support, groups[n]);
    class_mu[n] = tape.mean_rows(rows);
    class_dev[n] = tape.add_rowvec(rows, tape.scale(class_mu[n], -1.0));
    ad::Var sigma = tape.scale(tape.matmul(tape.transpose(class_dev[n]), class_dev[n]),
                               1.0 / static_cast<double>(groups[n].size()));
    st.sigma_class.push_back(sigma);
    st.lambda_blend.push_back(static_cast<double>(groups[n].size()) /
                              static_cast<double>(groups[n].size() + 1));
  }

  ad::Var mu = class_mu[0];
  for (int n = 1; n < n_classes; ++n) mu = tape.concat_rows(mu, class_mu[n]);
  st.mu = mu;

  ad::Var pooled_dev;
  if (mode == TaskCovMode::within_class) {
    pooled_dev = class_dev[0];
    for (int n = 1; n < n_classes; ++n) pooled_dev = tape.concat_rows(pooled_dev, class_dev[n]);
  } else {
    ad::Var global_mu = tape.mean_rows(support);
    pooled_dev = tape.add_rowvec(support, tape.scale(global_mu, -1.0));
  }
  st.sigma_task = tape.scale(tape.matmul(tape.transpose(pooled_dev), pooled_dev),
                             1.0 / static_cast<double>(s));

  for (int n = 0; n < n_classes; ++n) {
    const double lambda = st.lambda_blend[n];
    ad::Var q = tape.add(tape.add(tape.scale(st.sigma_class[n], lambda),
                                  tape.scale(st.sigma_task, 1.0 - lambda)),
                         tape.constant(scale(Tensor::identity(d), beta)));
    // The ridge makes Q PD; if rounding still trips the factorization,
    // apply the same bounded jitter the value path uses.
    for (int attempt = 0; attempt < 3; ++attempt) {
      try {
        cholesky_factor(tape.value(q));
        break;
      } catch (const NotPositiveDefiniteError&) {
        const Tensor& qv = tape.value(q);
        double trace = 0.0;
        for (std::size_t i = 0; i < d; ++i) trace += qv.at(i, i);
        q = tape.add(q, tape.constant(scale(Tensor::identity(d),
                                            1e-8 * trace / static_cast<double>(d))));
      }
    }
    st.q_reg.push_back(q);
  }
  return st;
}

ad::Var class_distances_vars(ad::Tape& tape, ad::Var rows, ad::Var centers,
                             const TaskStatsVars& stats, HeadKind head) {
  const std::size_t d = tape.value(rows).cols();
  const std::size_t n = tape.value(centers).rows();
  ad::Var ones = tape.constant(Tensor::full({d, 1}, 1.0));
  ad::Var stacked;  // [N x rows], one row of distances per class
  for (std::size_t c = 0; c < n; ++c) {
    ad::Var center = tape.gather_rows(centers, {c});
    ad::Var diff = tape.add_rowvec(rows, tape.scale(center, -1.0));
    ad::Var prod;
    if (head == HeadKind::euclidean) {
      prod = tape.mul(diff, diff);
    } else {
      ad::Var z = tape.cholesky_solve(stats.q_reg[c], tape.transpose(diff));
      prod = tape.mul(diff, tape.transpose(z));
    }
    ad::Var dist_col = tape.scale(tape.matmul(prod, ones), 0.5);  // [rows x 1]
    ad::Var dist_row = tape.transpose(dist_col);
    stacked = c == 0 ? dist_row : tape.concat_rows(stacked, dist_row);
  }
  return tape.transpose(stacked);  // [rows x N]
}

}  // namespace fsl
