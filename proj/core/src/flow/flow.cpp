#include "adma/flow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adma/error.hpp"
#include "adma/numerics/ops.hpp"

namespace adma::flow {

namespace ops = numerics;

FlowSample make_flow_sample(const Tensor& x1, const Tensor& x0, double t) {
  if (x1.shape() != x0.shape()) {
    throw DimensionError("make_flow_sample: x1 " + numerics::shape_str(x1.shape()) + " vs x0 " +
                         numerics::shape_str(x0.shape()));
  }
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("make_flow_sample: t outside [0, 1]");
  const auto a = x0.data();
  const auto b = x1.data();
  std::vector<double> psi(a.size()), target(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    psi[i] = (1.0 - t) * a[i] + t * b[i];
    target[i] = b[i] - a[i];
  }
  FlowSample s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  s.psi = Tensor::from(x1.shape(), std::move(psi));
  s.target = Tensor::from(x1.shape(), std::move(target));
  return s;
}

FlowSample make_flow_sample(const Tensor& x1, numerics::Rng& rng) {
  std::vector<double> noise(x1.numel());
  for (auto& v : noise) v = rng.normal();
  const double t = rng.uniform();
  return make_flow_sample(x1, Tensor::from(x1.shape(), std::move(noise)), t);
}

Tensor cfm_loss(const Tensor& v_pred, const Tensor& target, const corpus::TemporalMask& mask, bool masked_only) {
  if (v_pred.shape() != target.shape() || v_pred.rank() != 2) {
    throw DimensionError("cfm_loss: prediction " + numerics::shape_str(v_pred.shape()) + " vs target " +
                         numerics::shape_str(target.shape()));
  }
  const std::size_t f = v_pred.dim(0);
  const std::size_t n = v_pred.dim(1);
  if (mask.size() != n) throw DimensionError("cfm_loss: mask length does not match frame count");
  auto diff = ops::sub(v_pred, target);
  std::size_t count = n;
  if (masked_only) {
    count = corpus::mask_count(mask);
    if (count == 0) throw DomainError("cfm_loss: empty mask");
    if (count != n) {
      std::vector<double> w(n);
      for (std::size_t t = 0; t < n; ++t) w[t] = mask[t] ? 1.0 : 0.0;
      diff = ops::mul(diff, Tensor::from({1, n}, std::move(w)));
    }
  }
  return ops::scale(ops::sum(ops::square(diff)), 1.0 / static_cast<double>(f * count));
}

double sway_sample(double u, double s) {
  if (!(u >= 0.0 && u <= 1.0)) throw DomainError("sway_sample: u outside [0, 1]");
  if (!(s >= -1.0 && s <= 1.0)) throw DomainError("sway_sample: coefficient outside [-1, 1]");
  // cos(pi/2) is not exactly zero in floating point; pin the right endpoint.
  if (s == 0.0 || u == 1.0) return u;
  const double t = u + s * (std::cos(std::numbers::pi * u / 2.0) - 1.0 + u);
  return std::clamp(t, 0.0, 1.0);
}

Solver parse_solver(const std::string& name) {
  if (name == "euler") return Solver::euler;
  if (name == "midpoint") return Solver::midpoint;
  throw ConfigError("unknown solver '" + name + "' (expected euler or midpoint)");
}

std::string solver_name(Solver s) { return s == Solver::euler ? "euler" : "midpoint"; }

void SamplerConfig::validate() const {
  if (nfe_steps < 1) throw ConfigError("sampler: nfe_steps must be >= 1");
  if (!(sway >= -1.0 && sway <= 1.0)) throw ConfigError("sampler: sway coefficient must lie in [-1, 1]");
}

std::vector<double> time_grid(const SamplerConfig& cfg) {
  cfg.validate();
  std::vector<double> grid(cfg.nfe_steps + 1);
  for (std::size_t k = 0; k <= cfg.nfe_steps; ++k) {
    const double u = k == cfg.nfe_steps ? 1.0 : static_cast<double>(k) / static_cast<double>(cfg.nfe_steps);
    grid[k] = sway_sample(u, cfg.sway);
  }
  return grid;
}

namespace {

std::vector<double> axpy(std::span<const double> x, double a, std::span<const double> v) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + a * v[i];
  return out;
}

void check_state(std::span<const double> x, std::size_t step) {
  for (double v : x) {
    if (!std::isfinite(v)) throw NonFiniteError("solve_ode: non-finite state at step " + std::to_string(step));
  }
}

}  // namespace

Tensor solve_ode(const VectorField& v, const Tensor& x_start, const std::vector<double>& grid, Solver solver) {
  if (grid.size() < 2) throw DomainError("solve_ode: time grid needs at least two knots");
  numerics::NoGradGuard no_grad;
  Tensor x = x_start.detach();
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double t = grid[k];
    const double dt = grid[k + 1] - grid[k];
    const Tensor v0 = v(x, t);
    if (v0.shape() != x.shape()) throw DimensionError("solve_ode: field returned " + numerics::shape_str(v0.shape()));
    std::vector<double> next;
    if (solver == Solver::euler) {
      next = axpy(x.data(), dt, v0.data());
    } else {
      const Tensor xh = Tensor::from(x.shape(), axpy(x.data(), 0.5 * dt, v0.data()));
      check_state(xh.data(), k);
      const Tensor vh = v(xh, t + 0.5 * dt);
      next = axpy(x.data(), dt, vh.data());
    }
    check_state(next, k);
    x = Tensor::from(x.shape(), std::move(next));
  }
  return x;
}

Tensor overwrite_prompt(const Tensor& x, const Tensor& x_m, const corpus::TemporalMask& mask) {
  if (x.shape() != x_m.shape() || x.rank() != 2 || x.dim(1) != mask.size()) {
    throw DimensionError("overwrite_prompt: shape mismatch");
  }
  const std::size_t f = x.dim(0);
  const std::size_t n = x.dim(1);
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto src = x_m.data();
  for (std::size_t c = 0; c < f; ++c) {
    for (std::size_t t = 0; t < n; ++t) {
      if (!mask[t]) out[c * n + t] = src[c * n + t];
    }
  }
  return Tensor::from(x.shape(), std::move(out));
}

}  // namespace adma::flow
