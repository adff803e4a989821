#pragma once

#include "fslkit/tensor.hpp"

namespace fsl {

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
// Throws DimensionError for non-square input or asymmetry beyond 1e-10
// (relative to the largest entry), NotPositiveDefiniteError when a pivot
// is <= 0.
Tensor cholesky_factor(const Tensor& a);

// Solves A X = B through the factorization, never via an explicit inverse.
Tensor cholesky_solve(const Tensor& a, const Tensor& b);

// Same, reusing an already computed lower factor.
Tensor cholesky_solve_factored(const Tensor& lower, const Tensor& b);

// Jitter rescue: factor `a`, retrying up to `max_retries` times with
// 1e-8 * trace(a)/d added to the diagonal. On success returns the factor
// and stores the (possibly jittered) matrix back into `a`. Exhaustion
// raises NumericError.
Tensor cholesky_factor_with_jitter(Tensor& a, int max_retries = 3);

}  // namespace fsl
