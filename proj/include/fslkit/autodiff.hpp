#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "fslkit/tensor.hpp"

namespace fsl::ad {

// Handle to a node on a Tape. Plain value; cheap to copy.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Records every primitive in execution order, which is
// already a topological order, so the adjoint sweep is a single reverse
// pass: each node is propagated exactly once, after all of its consumers
// have contributed. A tape belongs to one training step on one thread.
class Tape {
public:
  Var leaf(Tensor value);
  // Same storage as a leaf; named for call sites that never read its grad.
  Var constant(Tensor value) { return leaf(std::move(value)); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t node_count() const { return nodes_.size(); }

  // Elementwise and structural primitives. All differentiable.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var mean_rows(Var a);  // [m x n] -> [1 x n], mean over the m rows
  Var mean_cols(Var a);  // [m x n] -> [m x 1], mean over the n columns
  Var sum(Var a);        // -> [1 x 1]
  Var log(Var a);
  Var exp(Var a);
  Var relu(Var a);
  Var gather_rows(Var a, std::vector<std::size_t> indices);
  Var concat_rows(Var a, Var b);
  Var add_rowvec(Var m, Var v);  // broadcast [1 x n] over the rows of [m x n]

  // Rows are shifted by their max before exponentiation, so huge logits
  // stay finite.
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);

  // X with A X = B for symmetric positive-definite A. The adjoint treats
  // the solve as a black box: Bbar = A^-1 Gbar, Abar = -Bbar X^T.
  Var cholesky_solve(Var a, Var b);

  // Convolution-stack primitives for the image backbone.
  Var conv2d(Var x, Var w, Var bias, int pad);  // x [B,C,H,W], w [F,C,kh,kw], bias [F]
  Var maxpool2d(Var x, int k);                  // stride k, trailing remainder dropped
  Var global_avg_pool(Var x);                   // [B,C,H,W] -> [B,C]

  // Adjoint sweep from a scalar loss. Gradients are then readable for any
  // node; untouched nodes report zeros.
  void backward(Var loss);
  Tensor grad(Var v) const;

private:
  using Pull = std::function<void(Tape&, int self, const Tensor& out_adjoint)>;
  struct Node {
    Tensor value;
    Pull pull;  // null for leaves
  };

  Var push(Tensor value, Pull pull);
  void accumulate(int id, Tensor contribution);
  const Tensor& adjoint(int id) const { return adjoints_[id]; }

  // Deque keeps value() references stable while later ops are recorded.
  std::deque<Node> nodes_;
  std::vector<Tensor> adjoints_;
  std::vector<bool> has_adjoint_;
};

// Softmax of each row, value-level convenience used outside training.
Tensor softmax_rows_value(const Tensor& x);

}  // namespace fsl::ad
