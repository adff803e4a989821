#include "fslkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "fslkit/errors.hpp"
#include "fslkit/linalg.hpp"

namespace fsl::ad {

namespace {

std::size_t idx4(const std::vector<std::size_t>& s, std::size_t a, std::size_t b, std::size_t c,
                 std::size_t d) {
  return ((a * s[1] + b) * s[2] + c) * s[3] + d;
}

void require_4d(const Tensor& t, const char* what) {
  if (t.ndim() != 4) {
    throw DimensionError(std::string(what) + " expects a 4-d tensor, got " + t.shape_string());
  }
}

}  // namespace

Tensor softmax_rows_value(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("softmax over zero columns");
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(x.at(i, j) - mx);
      y.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) /= denom;
  }
  return y;
}

Var Tape::push(Tensor value, Pull pull) {
  nodes_.push_back(Node{std::move(value), std::move(pull)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) { return push(std::move(value), nullptr); }

void Tape::accumulate(int id, Tensor contribution) {
  if (!has_adjoint_[id]) {
    adjoints_[id] = std::move(contribution);
    has_adjoint_[id] = true;
  } else {
    Tensor& a = adjoints_[id];
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += contribution[i];
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw Error("grad of a var that is not on this tape");
  }
  if (!adjoints_.empty() && has_adjoint_[v.id]) return adjoints_[v.id];
  return Tensor::zeros(nodes_[v.id].value.shape());
}

void Tape::backward(Var loss) {
  if (!loss.valid() || static_cast<std::size_t>(loss.id) >= nodes_.size()) {
    throw Error("backward from a var that is not on this tape");
  }
  if (!value(loss).is_scalar()) {
    throw DimensionError("backward expects a scalar loss, got " +
                         value(loss).shape_string());
  }
  adjoints_.assign(nodes_.size(), Tensor());
  has_adjoint_.assign(nodes_.size(), false);
  accumulate(loss.id, Tensor::full(value(loss).shape(), 1.0));
  for (int id = loss.id; id >= 0; --id) {
    if (!has_adjoint_[id] || !nodes_[id].pull) continue;
    nodes_[id].pull(*this, id, adjoints_[id]);
  }
}

Var Tape::add(Var a, Var b) {
  Tensor out = fsl::add(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, int, const Tensor& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

Var Tape::sub(Var a, Var b) {
  Tensor out = fsl::sub(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, int, const Tensor& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, fsl::scale(g, -1.0));
  });
}

Var Tape::mul(Var a, Var b) {
  Tensor out = fsl::mul(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, int, const Tensor& g) {
    t.accumulate(a.id, fsl::mul(g, t.value(b)));
    t.accumulate(b.id, fsl::mul(g, t.value(a)));
  });
}

Var Tape::scale(Var a, double s) {
  Tensor out = fsl::scale(value(a), s);
  return push(std::move(out), [a, s](Tape& t, int, const Tensor& g) {
    t.accumulate(a.id, fsl::scale(g, s));
  });
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = fsl::matmul(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, int, const Tensor& g) {
    t.accumulate(a.id, fsl::matmul(g, fsl::transpose(t.value(b))));
    t.accumulate(b.id, fsl::matmul(fsl::transpose(t.value(a)), g));
  });
}

Var Tape::transpose(Var a) {
  Tensor out = fsl::transpose(value(a));
  return push(std::move(out), [a](Tape& t, int, const Tensor& g) {
    t.accumulate(a.id, fsl::transpose(g));
  });
}

Var Tape::mean_rows(Var a) {
  const Tensor& x = value(a);
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0) throw DimensionError("mean_rows over zero rows");
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(0, j) += x.at(i, j);
  for (std::size_t j = 0; j < n; ++j) out.at(0, j) /= static_cast<double>(m);
  return push(std::move(out), [a, m, n](Tape& t, int, const Tensor& g) {
    Tensor da({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da.at(i, j) = g.at(0, j) / static_cast<double>(m);
    t.accumulate(a.id, std::move(da));
  });
}

Var Tape::mean_cols(Var a) {
  const Tensor& x = value(a);
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("mean_cols over zero columns");
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x.at(i, j);
    out.at(i, 0) = s / static_cast<double>(n);
  }
  return push(std::move(out), [a, m, n](Tape& t, int, const Tensor& g) {
    Tensor da({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da.at(i, j) = g.at(i, 0) / static_cast<double>(n);
    t.accumulate(a.id, std::move(da));
  });
}

Var Tape::sum(Var a) {
  const Tensor& x = value(a);
  double s = 0.0;
  for (double v : x.data()) s += v;
  return push(Tensor::scalar(s), [a](Tape& t, int, const Tensor& g) {
    t.accumulate(a.id, Tensor::full(t.value(a).shape(), g[0]));
  });
}

Var Tape::log(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = std::log(v);
  return push(std::move(out), [a](Tape& t, int, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor da = g;
    for (std::size_t i = 0; i < da.size(); ++i) da[i] /= x[i];
    t.accumulate(a.id, std::move(da));
  });
}

Var Tape::exp(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = std::exp(v);
  return push(std::move(out), [a](Tape& t, int self, const Tensor& g) {
    const Tensor& y = t.nodes_[self].value;
    Tensor da = g;
    for (std::size_t i = 0; i < da.size(); ++i) da[i] *= y[i];
    t.accumulate(a.id, std::move(da));
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), [a](Tape& t, int, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor da = g;
    for (std::size_t i = 0; i < da.size(); ++i) {
      if (x[i] <= 0.0) da[i] = 0.0;
    }
    t.accumulate(a.id, std::move(da));
  });
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> indices) {
  const Tensor& x = value(a);
  const std::size_t n = x.cols();
  Tensor out({indices.size(), n});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= x.rows()) throw DimensionError("gather_rows index out of range");
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) = x.at(indices[r], j);
  }
  return push(std::move(out), [a, idx = std::move(indices), n](Tape& t, int, const Tensor& g) {
    Tensor da(t.value(a).shape());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) da.at(idx[r], j) += g.at(r, j);
    t.accumulate(a.id, std::move(da));
  });
}

Var Tape::concat_rows(Var a, Var b) {
  const Tensor& xa = value(a);
  const Tensor& xb = value(b);
  if (xa.cols() != xb.cols()) {
    throw DimensionError("concat_rows column mismatch: " + xa.shape_string() + " vs " +
                         xb.shape_string());
  }
  const std::size_t ma = xa.rows(), mb = xb.rows(), n = xa.cols();
  Tensor out({ma + mb, n});
  for (std::size_t i = 0; i < ma; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = xa.at(i, j);
  for (std::size_t i = 0; i < mb; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(ma + i, j) = xb.at(i, j);
  return push(std::move(out), [a, b, ma, mb, n](Tape& t, int, const Tensor& g) {
    Tensor da({ma, n}), db({mb, n});
    for (std::size_t i = 0; i < ma; ++i)
      for (std::size_t j = 0; j < n; ++j) da.at(i, j) = g.at(i, j);
    for (std::size_t i = 0; i < mb; ++i)
      for (std::size_t j = 0; j < n; ++j) db.at(i, j) = g.at(ma + i, j);
    t.accumulate(a.id, std::move(da));
    t.accumulate(b.id, std::move(db));
  });
}

Var Tape::add_rowvec(Var m, Var v) {
  const Tensor& xm = value(m);
  const Tensor& xv = value(v);
  if (xv.rows() != 1 || xv.cols() != xm.cols()) {
    throw DimensionError("add_rowvec expects [1 x n] vector matching " + xm.shape_string());
  }
  const std::size_t r = xm.rows(), n = xm.cols();
  Tensor out = xm;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += xv.at(0, j);
  return push(std::move(out), [m, v, r, n](Tape& t, int, const Tensor& g) {
    t.accumulate(m.id, g);
    Tensor dv({1, n});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < n; ++j) dv.at(0, j) += g.at(i, j);
    t.accumulate(v.id, std::move(dv));
  });
}

Var Tape::softmax_rows(Var a) {
  Tensor y = softmax_rows_value(value(a));
  return push(std::move(y), [a](Tape& t, int self, const Tensor& g) {
    const Tensor& y = t.nodes_[self].value;
    const std::size_t m = y.rows(), n = y.cols();
    Tensor da({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < n; ++j) da.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
    }
    t.accumulate(a.id, std::move(da));
  });
}

Var Tape::log_softmax_rows(Var a) {
  const Tensor& x = value(a);
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("log_softmax over zero columns");
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(x.at(i, j) - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) = x.at(i, j) - lse;
  }
  return push(std::move(y), [a](Tape& t, int self, const Tensor& g) {
    const Tensor& y = t.nodes_[self].value;
    const std::size_t m = y.rows(), n = y.cols();
    Tensor da({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g.at(i, j);
      for (std::size_t j = 0; j < n; ++j)
        da.at(i, j) = g.at(i, j) - std::exp(y.at(i, j)) * gsum;
    }
    t.accumulate(a.id, std::move(da));
  });
}

Var Tape::cholesky_solve(Var a, Var b) {
  Tensor lower = fsl::cholesky_factor(value(a));
  Tensor x = fsl::cholesky_solve_factored(lower, value(b));
  return push(std::move(x), [a, b, lower = std::move(lower)](Tape& t, int self, const Tensor& g) {
    const Tensor& x = t.nodes_[self].value;
    Tensor db = fsl::cholesky_solve_factored(lower, g);
    Tensor da = fsl::scale(fsl::matmul(db, fsl::transpose(x)), -1.0);
    t.accumulate(a.id, std::move(da));
    t.accumulate(b.id, std::move(db));
  });
}

Var Tape::conv2d(Var xv, Var wv, Var bv, int pad) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  const Tensor& bias = value(bv);
  require_4d(x, "conv2d input");
  require_4d(w, "conv2d weight");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws[1] != xs[1]) throw DimensionError("conv2d channel mismatch");
  if (bias.ndim() != 1 || bias.shape()[0] != ws[0]) {
    throw DimensionError("conv2d bias must have one entry per filter");
  }
  const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t F = ws[0], KH = ws[2], KW = ws[3];
  const std::size_t OH = H + 2 * pad - KH + 1, OW = W + 2 * pad - KW + 1;
  Tensor out({B, F, OH, OW});
  const auto& os = out.shape();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double s = bias[f];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky) {
              const long iy = static_cast<long>(oy + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long ix = static_cast<long>(ox + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                s += x[idx4(xs, b, c, iy, ix)] * w[idx4(ws, f, c, ky, kx)];
              }
            }
          out[idx4(os, b, f, oy, ox)] = s;
        }
  return push(std::move(out), [xv, wv, bv, pad](Tape& t, int self, const Tensor& g) {
    const Tensor& x = t.value(xv);
    const Tensor& w = t.value(wv);
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const auto& gs = g.shape();
    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::size_t F = ws[0], KH = ws[2], KW = ws[3];
    const std::size_t OH = gs[2], OW = gs[3];
    Tensor dx(xs), dw(ws), dbias({F});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t oy = 0; oy < OH; ++oy)
          for (std::size_t ox = 0; ox < OW; ++ox) {
            const double go = g[idx4(gs, b, f, oy, ox)];
            if (go == 0.0) continue;
            dbias[f] += go;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ky = 0; ky < KH; ++ky) {
                const long iy = static_cast<long>(oy + ky) - pad;
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const long ix = static_cast<long>(ox + kx) - pad;
                  if (ix < 0 || ix >= static_cast<long>(W)) continue;
                  dx[idx4(xs, b, c, iy, ix)] += go * w[idx4(ws, f, c, ky, kx)];
                  dw[idx4(ws, f, c, ky, kx)] += go * x[idx4(xs, b, c, iy, ix)];
                }
              }
          }
    t.accumulate(xv.id, std::move(dx));
    t.accumulate(wv.id, std::move(dw));
    t.accumulate(bv.id, std::move(dbias));
  });
}

Var Tape::maxpool2d(Var xv, int k) {
  const Tensor& x = value(xv);
  require_4d(x, "maxpool2d input");
  if (k < 1) throw DimensionError("maxpool2d window must be >= 1");
  const auto& xs = x.shape();
  const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t OH = H / k, OW = W / k;
  if (OH == 0 || OW == 0) throw DimensionError("maxpool2d input smaller than window");
  Tensor out({B, C, OH, OW});
  std::vector<std::size_t> argmax(out.size());
  const auto& os = out.shape();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          std::size_t best = idx4(xs, b, c, oy * k, ox * k);
          double bestv = x[best];
          for (std::size_t dy = 0; dy < static_cast<std::size_t>(k); ++dy)
            for (std::size_t dx = 0; dx < static_cast<std::size_t>(k); ++dx) {
              const std::size_t i = idx4(xs, b, c, oy * k + dy, ox * k + dx);
              if (x[i] > bestv) {
                bestv = x[i];
                best = i;
              }
            }
          const std::size_t o = idx4(os, b, c, oy, ox);
          out[o] = bestv;
          argmax[o] = best;
        }
  return push(std::move(out), [xv, argmax = std::move(argmax)](Tape& t, int, const Tensor& g) {
    Tensor dx(t.value(xv).shape());
    for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
    t.accumulate(xv.id, std::move(dx));
  });
}

Var Tape::global_avg_pool(Var xv) {
  const Tensor& x = value(xv);
  require_4d(x, "global_avg_pool input");
  const auto& xs = x.shape();
  const std::size_t B = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor out({B, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      const std::size_t base = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) s += x[base + i];
      out.at(b, c) = s / static_cast<double>(HW);
    }
  return push(std::move(out), [xv, B, C, HW](Tape& t, int, const Tensor& g) {
    Tensor dx(t.value(xv).shape());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = g.at(b, c) / static_cast<double>(HW);
        const std::size_t base = (b * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) dx[base + i] = v;
      }
    t.accumulate(xv.id, std::move(dx));
  });
}

}  // namespace fsl::ad
