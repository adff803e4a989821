#include "fslkit/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "fslkit/adapter.hpp"
#include "fslkit/autodiff.hpp"
#include "fslkit/errors.hpp"
#include "fslkit/rng.hpp"
#include "fslkit/trainer.hpp"

namespace fsl {

namespace {

using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.gaussian();
  return t;
}

// Keeps entries away from the relu/maxpool kinks so the 1e-5 probe cannot
// cross them.
Tensor random_tensor_no_kink(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    do {
      v = rng.gaussian();
    } while (std::fabs(v) < 1e-3);
  }
  return t;
}

double eval_scalar(const Builder& build, const std::vector<Tensor>& leaves) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(leaves.size());
  for (const Tensor& t : leaves) vars.push_back(tape.leaf(t));
  return tape.value(build(tape, vars)).scalar_value();
}

double run_case(const Builder& build, std::vector<Tensor> leaves, double step = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(leaves.size());
  for (const Tensor& t : leaves) vars.push_back(tape.leaf(t));
  ad::Var loss = build(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(vars.size());
  for (ad::Var v : vars) analytic.push_back(tape.grad(v));

  double worst = 0.0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const double keep = leaves[l][i];
      leaves[l][i] = keep + step;
      const double up = eval_scalar(build, leaves);
      leaves[l][i] = keep - step;
      const double down = eval_scalar(build, leaves);
      leaves[l][i] = keep;
      const double fd = (up - down) / (2.0 * step);
      const double a = analytic[l][i];
      const double err = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Projects a tensor output onto a scalar with fixed random weights, so
// every output entry receives a distinct adjoint.
Builder project(std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)> op,
                Tensor weights) {
  return [op = std::move(op), weights = std::move(weights)](ad::Tape& tape,
                                                            const std::vector<ad::Var>& vars) {
    ad::Var out = op(tape, vars);
    return tape.sum(tape.mul(out, tape.constant(weights)));
  };
}

struct Suite {
  Rng rng;
  int trials;
  std::vector<GradCheckCase> cases;

  Suite(std::uint64_t seed, int trials) : rng(seed), trials(trials) {}

  void add(const std::string& name, const std::function<double()>& one_trial,
           double tol = 1e-4) {
    GradCheckCase c;
    c.name = name;
    c.tolerance = tol;
    for (int t = 0; t < trials; ++t) c.max_rel_err = std::max(c.max_rel_err, one_trial());
    c.pass = c.max_rel_err <= tol;
    cases.push_back(c);
  }

  std::size_t dim(std::size_t lo = 1, std::size_t hi = 5) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  }
};

}  // namespace

std::vector<GradCheckCase> run_gradient_suite(std::uint64_t seed, int trials) {
  Suite s(seed, trials);
  Rng& rng = s.rng;

  s.add("matmul", [&] {
    const std::size_t m = s.dim(), k = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.matmul(v[0], v[1]); };
    return run_case(project(op, random_tensor(rng, {m, n})),
                    {random_tensor(rng, {m, k}), random_tensor(rng, {k, n})});
  });

  s.add("add", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.add(v[0], v[1]); };
    return run_case(project(op, random_tensor(rng, {m, n})),
                    {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})});
  });

  s.add("sub", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.sub(v[0], v[1]); };
    return run_case(project(op, random_tensor(rng, {m, n})),
                    {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})});
  });

  s.add("mul", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.mul(v[0], v[1]); };
    return run_case(project(op, random_tensor(rng, {m, n})),
                    {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})});
  });

  s.add("scale", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    const double factor = rng.gaussian();
    auto op = [factor](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.scale(v[0], factor);
    };
    return run_case(project(op, random_tensor(rng, {m, n})), {random_tensor(rng, {m, n})});
  });

  s.add("transpose", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.transpose(v[0]); };
    return run_case(project(op, random_tensor(rng, {n, m})), {random_tensor(rng, {m, n})});
  });

  s.add("mean_rows", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.mean_rows(v[0]); };
    return run_case(project(op, random_tensor(rng, {1, n})), {random_tensor(rng, {m, n})});
  });

  s.add("mean_cols", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.mean_cols(v[0]); };
    return run_case(project(op, random_tensor(rng, {m, 1})), {random_tensor(rng, {m, n})});
  });

  s.add("sum", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.sum(v[0]); };
    return run_case(op, {random_tensor(rng, {m, n})});
  });

  s.add("log", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    Tensor x = random_tensor(rng, {m, n});
    for (double& v : x.data()) v = 0.5 + std::fabs(v);  // positive domain
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.log(v[0]); };
    return run_case(project(op, random_tensor(rng, {m, n})), {std::move(x)});
  });

  s.add("exp", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.exp(v[0]); };
    return run_case(project(op, random_tensor(rng, {m, n})), {random_tensor(rng, {m, n})});
  });

  s.add("relu", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.relu(v[0]); };
    return run_case(project(op, random_tensor(rng, {m, n})),
                    {random_tensor_no_kink(rng, {m, n})});
  });

  s.add("gather_rows", [&] {
    const std::size_t m = s.dim(2), n = s.dim();
    std::vector<std::size_t> idx;
    const std::size_t picks = 1 + rng.below(2 * m);
    for (std::size_t i = 0; i < picks; ++i) idx.push_back(rng.below(m));  // repeats allowed
    auto op = [idx](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.gather_rows(v[0], idx);
    };
    return run_case(project(op, random_tensor(rng, {idx.size(), n})),
                    {random_tensor(rng, {m, n})});
  });

  s.add("concat_rows", [&] {
    const std::size_t ma = s.dim(), mb = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.concat_rows(v[0], v[1]);
    };
    return run_case(project(op, random_tensor(rng, {ma + mb, n})),
                    {random_tensor(rng, {ma, n}), random_tensor(rng, {mb, n})});
  });

  s.add("add_rowvec", [&] {
    const std::size_t m = s.dim(), n = s.dim();
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.add_rowvec(v[0], v[1]);
    };
    return run_case(project(op, random_tensor(rng, {m, n})),
                    {random_tensor(rng, {m, n}), random_tensor(rng, {1, n})});
  });

  s.add("softmax_rows", [&] {
    const std::size_t m = s.dim(), n = s.dim(2);
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.softmax_rows(v[0]); };
    return run_case(project(op, random_tensor(rng, {m, n})), {random_tensor(rng, {m, n})});
  });

  s.add("log_softmax_rows", [&] {
    const std::size_t m = s.dim(), n = s.dim(2);
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.log_softmax_rows(v[0]);
    };
    return run_case(project(op, random_tensor(rng, {m, n})), {random_tensor(rng, {m, n})});
  });

  s.add("cholesky_solve", [&] {
    const std::size_t d = s.dim(2, 5), k = s.dim();
    // SPD input built as G^T G + 2I so probing entries of G keeps the
    // matrix in the op's domain.
    auto op = [d](ad::Tape& t, const std::vector<ad::Var>& v) {
      ad::Var a = t.add(t.matmul(t.transpose(v[0]), v[0]),
                        t.constant(scale(Tensor::identity(d), 2.0)));
      return t.cholesky_solve(a, v[1]);
    };
    return run_case(project(op, random_tensor(rng, {d, k})),
                    {random_tensor(rng, {d, d}), random_tensor(rng, {d, k})});
  });

  s.add("conv2d", [&] {
    const std::size_t b = 1 + rng.below(2), c = 1 + rng.below(2), f = 1 + rng.below(3);
    const std::size_t hw = 4 + rng.below(3);
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.conv2d(v[0], v[1], v[2], 1);
    };
    return run_case(project(op, random_tensor(rng, {b, f, hw, hw})),
                    {random_tensor(rng, {b, c, hw, hw}), random_tensor(rng, {f, c, 3, 3}),
                     random_tensor(rng, {f})});
  });

  s.add("maxpool2d", [&] {
    const std::size_t b = 1 + rng.below(2), c = 1 + rng.below(2);
    const std::size_t hw = 4 + 2 * rng.below(2);
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.maxpool2d(v[0], 2); };
    Tensor x = random_tensor(rng, {b, c, hw, hw}, 10.0);  // spread avoids near-ties
    return run_case(project(op, random_tensor(rng, {b, c, hw / 2, hw / 2})), {std::move(x)});
  });

  s.add("global_avg_pool", [&] {
    const std::size_t b = 1 + rng.below(2), c = 1 + rng.below(3), hw = 2 + rng.below(3);
    auto op = [](ad::Tape& t, const std::vector<ad::Var>& v) {
      return t.global_avg_pool(v[0]);
    };
    return run_case(project(op, random_tensor(rng, {b, c})),
                    {random_tensor(rng, {b, c, hw, hw})});
  });

  s.add("adapter", [&] {
    const std::size_t d = 3, sup = 3, que = 2;
    Tensor pa = random_tensor(rng, {sup + que, d});
    Tensor pb = random_tensor(rng, {sup + que, d});
    auto op = [pa, pb, sup](ad::Tape& t, const std::vector<ad::Var>& v) {
      AdapterVars params;
      params.w_q = v[0];
      params.w_k = v[1];
      params.w_v = v[2];
      AdaptedSetVars out = adapt_vars(t, v[3], v[4], params);
      ad::Var joined = t.concat_rows(out.support, out.queries);
      return t.sum(t.mul(joined, t.constant(pa)));
    };
    return run_case(op, {random_tensor(rng, {d, d}), random_tensor(rng, {d, d}),
                         random_tensor(rng, {d, d}), random_tensor(rng, {sup, d}),
                         random_tensor(rng, {que, d})});
  });

  // The combined episodic loss on a 2-way 2-shot, d=4 task through the
  // precomputed path: gradients w.r.t. all three adapter projections.
  {
    TrainConfig cfg;
    cfg.n_way = 2;
    cfg.m_shot = 2;
    cfg.queries_per_class = 2;
    cfg.beta = 1.0;
    cfg.loss_lambda = 0.1;
    EpisodeBatch batch;
    batch.support_inputs = random_tensor(rng, {4, 4});
    batch.query_inputs = random_tensor(rng, {4, 4});
    batch.support_labels = {0, 0, 1, 1};
    batch.query_labels = {0, 0, 1, 1};
    auto op = [batch, cfg](ad::Tape& t, const std::vector<ad::Var>& v) {
      ModelVars model;
      model.kind = BackboneKind::precomputed;
      model.adapter.w_q = v[0];
      model.adapter.w_k = v[1];
      model.adapter.w_v = v[2];
      return episode_loss_vars(t, batch, model, cfg);
    };
    s.add("episode_loss", [&] {
      return run_case(op, {random_tensor(rng, {4, 4}), random_tensor(rng, {4, 4}),
                           random_tensor(rng, {4, 4})});
    });
  }

  return s.cases;
}

bool all_passed(const std::vector<GradCheckCase>& cases) {
  for (const auto& c : cases) {
    if (!c.pass) return false;
  }
  return !cases.empty();
}

std::string format_report(const std::vector<GradCheckCase>& cases) {
  std::ostringstream os;
  char buf[160];
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof(buf), "%-18s max_rel_err %.3e  tol %.0e  %s\n", c.name.c_str(),
                  c.max_rel_err, c.tolerance, c.pass ? "ok" : "FAIL");
    os << buf;
  }
  return os.str();
}

}  // namespace fsl
