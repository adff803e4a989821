#pragma once

#include <cstdint>

#include "fslkit/autodiff.hpp"
#include "fslkit/backbone.hpp"
#include "fslkit/tensor.hpp"

namespace fsl {

// Learned projections of the set-to-set attention. Square d x d maps;
// biases are optional and off by default.
struct AdapterParams {
  Tensor w_q, w_k, w_v;  // [d x d]
  bool has_bias = false;
  Tensor b_q, b_k, b_v;  // [1 x d], present when has_bias

  std::size_t dim() const { return w_q.rows(); }
};

AdapterParams init_adapter(std::size_t dim, std::uint64_t seed, bool bias = false);

struct AdapterVars {
  ad::Var w_q, w_k, w_v;
  ad::Var b_q, b_k, b_v;
  bool has_bias = false;
};

AdapterVars lift_adapter(ad::Tape& tape, const AdapterParams& params);

// Tape-level adaptation. Every row (support and query) is enriched by
// attention over the support rows only, with a residual connection:
//   psi_i = phi_i + sum_j a_ij (W_v phi_j),
//   a_i = softmax_j((W_q phi_i)^T (W_k phi_j) / sqrt(d)).
// Queries never attend to each other, so each query's output is
// independent of the rest of the query set.
struct AdaptedSetVars {
  ad::Var support;    // [S x d]
  ad::Var queries;    // [Qn x d], zero rows when no queries were given
  ad::Var attention;  // [(S+Qn) x S], support rows first
};

AdaptedSetVars adapt_vars(ad::Tape& tape, ad::Var support, ad::Var queries,
                          const AdapterVars& params);

// Value-level adaptation of an episode's embeddings.
struct AdaptedSet {
  EmbeddingBatch support;
  EmbeddingBatch queries;
  Tensor attention;  // [(S+Qn) x S]
};

AdaptedSet adapt(const EmbeddingBatch& support, const EmbeddingBatch& queries,
                 const AdapterParams& params);

}  // namespace fsl
