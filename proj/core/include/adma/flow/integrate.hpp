#pragma once

#include <vector>

#include "adma/corpus/corpus.hpp"
#include "adma/flow/flow.hpp"
#include "adma/model/model.hpp"
#include "adma/numerics/rng.hpp"

namespace adma::flow {

/// One utterance to infill: context features, the mask that marks the frames
/// to generate, and the padded text covering all N frames.
struct InfillRequest {
  Tensor x_m;  // [F x N], zero on masked frames
  corpus::TemporalMask mask;
  corpus::TokenSeq padded_tokens;
};

/// Starts at x ~ N(0, I), integrates the model's field over the sampler's
/// time grid and restores the unmasked frames from x_m.
Tensor integrate(const model::Model& m, const InfillRequest& request, const SamplerConfig& cfg, numerics::Rng& rng);

/// Same for a batch. Noise is drawn item by item in order, so each result
/// equals integrate() on that item with the rng at the same position.
std::vector<Tensor> integrate_batch(const model::Model& m, const std::vector<InfillRequest>& requests,
                                    const SamplerConfig& cfg, numerics::Rng& rng);

}  // namespace adma::flow
