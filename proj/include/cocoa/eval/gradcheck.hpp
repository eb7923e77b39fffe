#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cocoa/autodiff/grad_check.hpp"

namespace cocoa::eval {

struct GradCheckCase {
  std::string name;
  ad::GradCheckReport report;
};

struct GradCheckSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t coords_per_parameter = 24;  // 0 = every coordinate
  double tolerance = 1e-4;
};

// Primitive ops, then the four training losses (L_AGG, L_D, L_G, L_CLS) on
// small random batches.
std::vector<GradCheckCase> run_grad_check_suite(const GradCheckSuiteOptions& options = {});

bool all_passed(const std::vector<GradCheckCase>& cases);

}  // namespace cocoa::eval
