#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fsl {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

// Central-finite-difference validation (step 1e-5) of every differentiable
// primitive on randomized shapes, plus the adapter gradients and the full
// episode loss on a 2-way 2-shot d=4 task. The difference quotients only
// use forward evaluations, so they are independent of the adjoint code
// they check.
std::vector<GradCheckCase> run_gradient_suite(std::uint64_t seed = 0x5eedcafeULL,
                                              int trials = 20);

bool all_passed(const std::vector<GradCheckCase>& cases);

std::string format_report(const std::vector<GradCheckCase>& cases);

}  // namespace fsl
