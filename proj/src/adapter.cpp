#include "fslkit/adapter.hpp"

#include <cmath>
#include <numeric>

#include "fslkit/errors.hpp"
#include "fslkit/rng.hpp"

namespace fsl {

AdapterParams init_adapter(std::size_t dim, std::uint64_t seed, bool bias) {
  Rng rng(seed);
  const double std_w = 1.0 / std::sqrt(static_cast<double>(dim));
  AdapterParams p;
  for (Tensor* w : {&p.w_q, &p.w_k, &p.w_v}) {
    *w = Tensor({dim, dim});
    for (double& v : w->data()) v = std_w * rng.gaussian();
  }
  p.has_bias = bias;
  if (bias) {
    p.b_q = Tensor({1, dim});
    p.b_k = Tensor({1, dim});
    p.b_v = Tensor({1, dim});
  }
  return p;
}

AdapterVars lift_adapter(ad::Tape& tape, const AdapterParams& params) {
  AdapterVars v;
  v.w_q = tape.leaf(params.w_q);
  v.w_k = tape.leaf(params.w_k);
  v.w_v = tape.leaf(params.w_v);
  v.has_bias = params.has_bias;
  if (params.has_bias) {
    v.b_q = tape.leaf(params.b_q);
    v.b_k = tape.leaf(params.b_k);
    v.b_v = tape.leaf(params.b_v);
  }
  return v;
}

namespace {

ad::Var project(ad::Tape& tape, ad::Var rows, ad::Var w, ad::Var b, bool has_bias) {
  ad::Var out = tape.matmul(rows, tape.transpose(w));
  return has_bias ? tape.add_rowvec(out, b) : out;
}

}  // namespace

AdaptedSetVars adapt_vars(ad::Tape& tape, ad::Var support, ad::Var queries,
                          const AdapterVars& params) {
  const std::size_t s = tape.value(support).rows();
  const std::size_t d = tape.value(support).cols();
  if (s == 0) throw DataError("adapt requires a nonempty support set");
  if (tape.value(params.w_q).rows() != d) {
    throw DimensionError("adapter dimension " + tape.value(params.w_q).shape_string() +
                         " does not match embeddings of width " + std::to_string(d));
  }
  const std::size_t nq = queries.valid() ? tape.value(queries).rows() : 0;
  if (nq > 0 && tape.value(queries).cols() != d) {
    throw DimensionError("query embedding width differs from support width");
  }

  ad::Var all = nq > 0 ? tape.concat_rows(support, queries) : support;
  ad::Var q = project(tape, all, params.w_q, params.b_q, params.has_bias);
  ad::Var k = project(tape, support, params.w_k, params.b_k, params.has_bias);
  ad::Var v = project(tape, support, params.w_v, params.b_v, params.has_bias);

  ad::Var scores = tape.scale(tape.matmul(q, tape.transpose(k)),
                              1.0 / std::sqrt(static_cast<double>(d)));
  ad::Var attention = tape.softmax_rows(scores);  // [(S+Qn) x S]
  ad::Var adapted = tape.add(all, tape.matmul(attention, v));

  std::vector<std::size_t> sup_idx(s);
  std::iota(sup_idx.begin(), sup_idx.end(), std::size_t{0});
  std::vector<std::size_t> que_idx(nq);
  std::iota(que_idx.begin(), que_idx.end(), s);

  AdaptedSetVars out;
  out.support = tape.gather_rows(adapted, sup_idx);
  out.queries = tape.gather_rows(adapted, que_idx);
  out.attention = attention;
  return out;
}

AdaptedSet adapt(const EmbeddingBatch& support, const EmbeddingBatch& queries,
                 const AdapterParams& params) {
  ad::Tape tape;
  AdapterVars vars = lift_adapter(tape, params);
  ad::Var sup = tape.constant(support.embeddings);
  ad::Var que = tape.constant(queries.embeddings.ndim() == 2
                                  ? queries.embeddings
                                  : Tensor({0, support.embeddings.cols()}));
  AdaptedSetVars adapted = adapt_vars(tape, sup, que, vars);

  AdaptedSet out;
  out.support = EmbeddingBatch{tape.value(adapted.support), support.labels};
  out.queries = EmbeddingBatch{tape.value(adapted.queries), queries.labels};
  out.attention = tape.value(adapted.attention);
  return out;
}

}  // namespace fsl
