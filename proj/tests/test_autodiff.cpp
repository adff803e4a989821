#include <doctest.h>

#include <cmath>

#include "fslkit/autodiff.hpp"
#include "fslkit/errors.hpp"
#include "fslkit/gradcheck.hpp"
#include "fslkit/rng.hpp"

using namespace fsl;

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("softmax of a constant row is uniform") {
  const Tensor y = ad::softmax_rows_value(Tensor::row({0, 0, 0}));
  for (std::size_t j = 0; j < 3; ++j) CHECK(y.at(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax analytic two-entry row") {
  const double c = -3.7;
  const Tensor y = ad::softmax_rows_value(Tensor::row({c, c + std::log(2.0)}));
  CHECK(y.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(y.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax stays finite for huge logits") {
  const Tensor y = ad::softmax_rows_value(Tensor::row({1000.0, 1001.0}));
  CHECK(std::isfinite(y.at(0, 0)));
  // Shifted-exponent evaluation: exp(-1)/(exp(-1)+1) and 1/(exp(-1)+1).
  CHECK(y.at(0, 0) == doctest::Approx(std::exp(-1.0) / (std::exp(-1.0) + 1.0)).epsilon(1e-12));
  CHECK(y.at(0, 1) == doctest::Approx(1.0 / (std::exp(-1.0) + 1.0)).epsilon(1e-12));
  CHECK(y.at(0, 0) == doctest::Approx(0.2689).epsilon(1e-3));
  CHECK(y.at(0, 1) == doctest::Approx(0.7311).epsilon(1e-3));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(5), n = 1 + rng.below(6);
    Tensor x({m, n});
    for (double& v : x.data()) v = 10.0 * rng.gaussian();
    const Tensor y = ad::softmax_rows_value(x);
    Tensor shifted = x;
    const double c = 5.0 * rng.gaussian();
    for (double& v : shifted.data()) v += c;
    const Tensor y2 = ad::softmax_rows_value(shifted);
    for (std::size_t i = 0; i < m; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += y.at(i, j);
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
    CHECK(max_abs_diff(y, y2) <= 1e-12);
  }
}

TEST_CASE("gradient of sum is all ones") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  tape.backward(tape.sum(x));
  const Tensor g = tape.grad(x);
  for (double v : g.data()) CHECK(v == 1.0);
}

TEST_CASE("gradient of half squared norm is x") {
  Rng rng(29);
  Tensor x({3, 2});
  for (double& v : x.data()) v = rng.gaussian();
  ad::Tape tape;
  ad::Var xv = tape.leaf(x);
  ad::Var loss = tape.scale(tape.sum(tape.mul(xv, xv)), 0.5);
  tape.backward(loss);
  CHECK(max_abs_diff(tape.grad(xv), x) <= 1e-14);
}

TEST_CASE("backward rejects non-scalar loss") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor({2, 2}));
  CHECK_THROWS_AS(tape.backward(x), DimensionError);
}

TEST_CASE("gradients accumulate across reused values") {
  // y = x + x: dy/dx = 2 per entry.
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor::row({1.0, 2.0}));
  tape.backward(tape.sum(tape.add(x, x)));
  const Tensor g = tape.grad(x);
  for (double v : g.data()) CHECK(v == 2.0);
}

TEST_CASE("untouched leaves report zero gradients") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor::row({1.0}));
  ad::Var unused = tape.leaf(Tensor::row({5.0}));
  tape.backward(tape.sum(x));
  CHECK(tape.grad(unused)[0] == 0.0);
}

TEST_CASE("finite differences agree for every primitive") {
  // Quick sweep here; the acceptance suite runs the full 20-trial version.
  const auto cases = run_gradient_suite(0x51deba11ULL, 4);
  for (const auto& c : cases) {
    INFO(c.name, " max_rel_err=", c.max_rel_err);
    CHECK(c.pass);
  }
  CHECK(cases.size() >= 20);
}

TEST_SUITE_END();
