#include "adma/numerics/grad_check.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "adma/error.hpp"

namespace adma::numerics {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  Tensor y = f();
  if (y.numel() != 1) throw DimensionError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
  return y.item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& inputs,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0 && options.eps <= 1e-2)) throw DomainError("grad_check: eps must lie in (0, 1e-2]");
  GradCheckReport report;
  report.eps = options.eps;
  report.tol = options.tol;

  std::vector<Tensor> leaves;
  std::vector<bool> previous_flags;
  for (const auto& [name, t] : inputs) {
    Tensor leaf = t;
    previous_flags.push_back(leaf.requires_grad());
    leaf.set_requires_grad(true);
    leaf.zero_grad();
    leaves.push_back(leaf);
  }

  double y0 = 0.0;
  {
    Tensor y = f();
    if (y.numel() != 1) throw DimensionError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
    y0 = y.item();
    if (!std::isfinite(y0)) throw NonFiniteError("grad_check: f is not finite at the probe point");
    y.backward();
  }
  const double y1 = eval_scalar(f);
  if (std::bit_cast<std::uint64_t>(y0) != std::bit_cast<std::uint64_t>(y1)) {
    std::ostringstream os;
    os << std::setprecision(17) << "grad_check: f is non-deterministic (" << y0 << " vs " << y1 << ")";
    throw NonDeterministicError(os.str());
  }

  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Tensor& leaf = leaves[k];
    GradCheckEntry entry;
    entry.name = inputs[k].first;
    const std::vector<double> g_ad = leaf.grad();
    const std::size_t n = leaf.numel();
    const std::size_t probes =
        options.max_probes_per_tensor == 0 ? n : std::min(n, options.max_probes_per_tensor);
    auto values = leaf.mutable_data();
    for (std::size_t p = 0; p < probes; ++p) {
      const std::size_t i = probes == n ? p : (p * n) / probes;
      const double saved = values[i];
      values[i] = saved + options.eps;
      const double up = eval_scalar(f);
      values[i] = saved - options.eps;
      const double down = eval_scalar(f);
      values[i] = saved;
      entry.probed.push_back(i);
      entry.analytic.push_back(g_ad[i]);
      entry.numeric.push_back((up - down) / (2.0 * options.eps));
    }
    double scale = 1e-8;
    for (std::size_t p = 0; p < entry.probed.size(); ++p) {
      scale = std::max({scale, std::abs(entry.analytic[p]), std::abs(entry.numeric[p])});
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(entry.analytic[p] - entry.numeric[p]));
    }
    entry.rel_error = entry.max_abs_error / scale;
    entry.passed = std::isfinite(entry.rel_error) && entry.rel_error < options.tol;
    report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }

  for (std::size_t k = 0; k < leaves.size(); ++k) {
    leaves[k].zero_grad();
    leaves[k].set_requires_grad(previous_flags[k]);
  }
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3);
  for (const auto& e : report.entries) {
    os << (e.passed ? "  ok   " : "  FAIL ") << std::left << std::setw(36) << e.name << " rel " << e.rel_error
       << "  abs " << e.max_abs_error << "  (" << e.probed.size() << " probes)\n";
  }
  os << "max rel error " << report.max_rel_error << " (tol " << report.tol << ", eps " << report.eps << ") -> "
     << (report.passed ? "PASS" : "FAIL") << '\n';
  return os.str();
}

}  // namespace adma::numerics
