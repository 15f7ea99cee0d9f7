#include "adma/flow/integrate.hpp"

#include "adma/error.hpp"

namespace adma::flow {

namespace {

// Places [F x N_b] blocks side by side as one [F x sum N_b] state.
Tensor pack(const std::vector<Tensor>& parts, std::size_t rows, std::size_t total) {
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) out[r * total + col + j] = p.data()[r * n + j];
    }
    col += n;
  }
  return Tensor::from({rows, total}, std::move(out));
}

std::vector<Tensor> unpack(const Tensor& packed, const std::vector<std::size_t>& widths) {
  const std::size_t rows = packed.dim(0);
  const std::size_t total = packed.dim(1);
  std::vector<Tensor> out;
  std::size_t col = 0;
  for (std::size_t n : widths) {
    std::vector<double> d(rows * n);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) d[r * n + j] = packed.data()[r * total + col + j];
    }
    out.push_back(Tensor::from({rows, n}, std::move(d)));
    col += n;
  }
  return out;
}

}  // namespace

Tensor integrate(const model::Model& m, const InfillRequest& request, const SamplerConfig& cfg, numerics::Rng& rng) {
  return integrate_batch(m, {request}, cfg, rng).front();
}

std::vector<Tensor> integrate_batch(const model::Model& m, const std::vector<InfillRequest>& requests,
                                    const SamplerConfig& cfg, numerics::Rng& rng) {
  if (requests.empty()) throw DimensionError("integrate: empty batch");
  const std::size_t F = m.config().feature_dim;
  std::vector<std::size_t> widths;
  std::vector<Tensor> noise;
  std::size_t total = 0;
  for (const auto& req : requests) {
    const std::size_t n = req.padded_tokens.size();
    if (req.x_m.rank() != 2 || req.x_m.dim(0) != F || req.x_m.dim(1) != n || req.mask.size() != n) {
      throw DimensionError("integrate: x_m " + numerics::shape_str(req.x_m.shape()) + ", mask of " +
                           std::to_string(req.mask.size()) + " and " + std::to_string(n) + " tokens disagree");
    }
    std::vector<double> x0(F * n);
    for (auto& v : x0) v = rng.normal();
    noise.push_back(Tensor::from({F, n}, std::move(x0)));
    widths.push_back(n);
    total += n;
  }

  const VectorField field = [&](const Tensor& x, double t) {
    const auto states = unpack(x, widths);
    std::vector<model::ModelInput> batch;
    batch.reserve(requests.size());
    for (std::size_t b = 0; b < requests.size(); ++b) {
      batch.push_back({states[b], requests[b].x_m, requests[b].padded_tokens, t});
    }
    return pack(m.forward_batch(batch).v, F, total);
  };
  const auto x1 = unpack(solve_ode(field, pack(noise, F, total), time_grid(cfg), cfg.solver), widths);

  std::vector<Tensor> out;
  out.reserve(requests.size());
  for (std::size_t b = 0; b < requests.size(); ++b) {
    out.push_back(overwrite_prompt(x1[b], requests[b].x_m, requests[b].mask));
  }
  return out;
}

}  // namespace adma::flow
