#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adma/numerics/grad_check.hpp"

namespace adma::train {

struct SuiteCase {
  std::string name;
  numerics::GradCheckReport report;
};

struct SuiteReport {
  std::vector<SuiteCase> cases;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Finite-difference check of every training loss on the tiny profile
/// (2 blocks, width 8, 8 frames): l_cfm, l_text under each reduction, l_speech
/// under each variant and the default l_total, each with respect to every
/// model and head parameter. Parameters are drawn at random so no gradient is
/// trivially zero.
SuiteReport run_gradient_suite(double eps = 1e-5, double tol = 1e-4, std::uint64_t seed = 0);

std::string format_suite(const SuiteReport& report);

}  // namespace adma::train
