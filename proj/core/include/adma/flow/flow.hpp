#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "adma/corpus/corpus.hpp"
#include "adma/numerics/rng.hpp"
#include "adma/numerics/tensor.hpp"

namespace adma::flow {

using numerics::Tensor;

/// One point on the straight noise-to-data path.
struct FlowSample {
  Tensor x0;      // noise, [F x N]
  Tensor x1;      // data, [F x N]
  double t = 0.0;
  Tensor psi;     // (1 - t) x0 + t x1
  Tensor target;  // x1 - x0
};

/// Builds the sample from explicit noise and time. psi and target are computed
/// elementwise with exactly the stated formulas.
FlowSample make_flow_sample(const Tensor& x1, const Tensor& x0, double t);
/// x0 ~ N(0, I), t ~ U[0, 1].
FlowSample make_flow_sample(const Tensor& x1, numerics::Rng& rng);

/// Mean squared error over masked frames (all frames when `masked_only` is
/// false). v_pred and target are [F x N]; the mean is over F * count entries.
/// Throws DomainError when no frame is selected.
Tensor cfm_loss(const Tensor& v_pred, const Tensor& target, const corpus::TemporalMask& mask,
                bool masked_only = true);
inline Tensor cfm_loss(const Tensor& v_pred, const FlowSample& s, const corpus::TemporalMask& mask,
                       bool masked_only = true) {
  return cfm_loss(v_pred, s.target, mask, masked_only);
}

/// t = u + s (cos(pi u / 2) - 1 + u). u in [0, 1], s in [-1, 1].
double sway_sample(double u, double s);

enum class Solver { euler, midpoint };
Solver parse_solver(const std::string& name);
std::string solver_name(Solver s);

struct SamplerConfig {
  Solver solver = Solver::euler;
  std::size_t nfe_steps = 32;
  double sway = -1.0;

  void validate() const;
};

/// nfe_steps + 1 knots: sway_sample(k / nfe_steps, sway).
std::vector<double> time_grid(const SamplerConfig& cfg);

/// v(x, t) for a [F x N] state; evaluated without gradient recording.
using VectorField = std::function<Tensor(const Tensor& x, double t)>;

/// Integrates dx/dt = v(x, t) across `grid`. Euler takes one evaluation per
/// interval, midpoint two. Throws NonFiniteError naming the step on NaN/Inf.
Tensor solve_ode(const VectorField& v, const Tensor& x_start, const std::vector<double>& grid, Solver solver);

/// Copies x_m into the unmasked frames of x (prompt preservation).
Tensor overwrite_prompt(const Tensor& x, const Tensor& x_m, const corpus::TemporalMask& mask);

}  // namespace adma::flow
