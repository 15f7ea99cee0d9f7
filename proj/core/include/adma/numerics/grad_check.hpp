#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adma/numerics/tensor.hpp"

namespace adma::numerics {

/// f returned different values for two evaluations at the same point.
class NonDeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckEntry {
  std::string name;
  std::vector<std::size_t> probed;  // flat indices that were perturbed
  std::vector<double> analytic;     // reverse-mode gradient at probed indices
  std::vector<double> numeric;      // central differences at probed indices
  double max_abs_error = 0.0;
  /// max_i |g_ad - g_fd| / max(max_i |g_ad|, max_i |g_fd|, 1e-8) over this tensor.
  double rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double eps = 0.0;
  double tol = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-5;
  /// Upper bound on perturbed entries per tensor (evenly strided); 0 probes all.
  std::size_t max_probes_per_tensor = 0;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Compares reverse-mode gradients of the scalar f() against central finite
/// differences with respect to each named leaf. The leaves are perturbed in
/// place and restored; their accumulated gradients are cleared on return.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& inputs,
                           const GradCheckOptions& options);

std::string format_report(const GradCheckReport& report);

}  // namespace adma::numerics
