#include "fslkit/linalg.hpp"

#include <cmath>

#include "fslkit/errors.hpp"

namespace fsl {

namespace {

void require_square(const Tensor& a) {
  if (a.ndim() != 2 || a.rows() != a.cols()) {
    throw DimensionError("cholesky expects a square matrix, got " + a.shape_string());
  }
}

void require_symmetric(const Tensor& a) {
  const std::size_t n = a.rows();
  const double tol = 1e-10 * std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::fabs(a.at(i, j) - a.at(j, i)) > tol) {
        throw DimensionError("matrix is not symmetric within tolerance");
      }
    }
  }
}

}  // namespace

Tensor cholesky_factor(const Tensor& a) {
  require_square(a);
  require_symmetric(a);
  const std::size_t n = a.rows();
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a.at(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l.at(j, k) * l.at(j, k);
    if (!(diag > 0.0)) {
      throw NotPositiveDefiniteError("cholesky pivot <= 0 at column " + std::to_string(j));
    }
    const double ljj = std::sqrt(diag);
    l.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = s / ljj;
    }
  }
  return l;
}

Tensor cholesky_solve_factored(const Tensor& lower, const Tensor& b) {
  const std::size_t n = lower.rows();
  if (b.ndim() != 2 || b.rows() != n) {
    throw DimensionError("cholesky_solve rhs has " + b.shape_string() + ", expected " +
                         std::to_string(n) + " rows");
  }
  const std::size_t k = b.cols();
  // Forward substitution: L Y = B.
  Tensor y = b;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = y.at(i, c);
      for (std::size_t j = 0; j < i; ++j) s -= lower.at(i, j) * y.at(j, c);
      y.at(i, c) = s / lower.at(i, i);
    }
  }
  // Back substitution: L^T X = Y.
  Tensor x = y;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x.at(ii, c);
      for (std::size_t j = ii + 1; j < n; ++j) s -= lower.at(j, ii) * x.at(j, c);
      x.at(ii, c) = s / lower.at(ii, ii);
    }
  }
  return x;
}

Tensor cholesky_solve(const Tensor& a, const Tensor& b) {
  return cholesky_solve_factored(cholesky_factor(a), b);
}

Tensor cholesky_factor_with_jitter(Tensor& a, int max_retries) {
  for (int attempt = 0;; ++attempt) {
    try {
      return cholesky_factor(a);
    } catch (const NotPositiveDefiniteError&) {
      if (attempt >= max_retries) {
        throw NumericError("matrix not positive definite after " +
                           std::to_string(max_retries) + " jitter retries");
      }
      const std::size_t n = a.rows();
      double trace = 0.0;
      for (std::size_t i = 0; i < n; ++i) trace += a.at(i, i);
      const double jitter = 1e-8 * trace / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) a.at(i, i) += jitter;
    }
  }
}

}  // namespace fsl
