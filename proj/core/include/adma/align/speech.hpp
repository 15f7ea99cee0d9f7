#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "adma/numerics/params.hpp"
#include "adma/numerics/tensor.hpp"

namespace adma::align {

using numerics::Tensor;

/// One frozen convolution layer; input and output are [time x channels].
struct ExtractorLayer {
  Tensor weight;  // [(kernel * C_in) x C_out]
  Tensor bias;    // [C_out]
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad_left = 1;
  std::size_t pad_right = 1;
};

/// Randomly initialised convolution stack standing in for a pretrained speech
/// encoder. Its parameters never track gradients.
struct FrozenExtractor {
  std::vector<ExtractorLayer> layers;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::size_t stride_total = 1;

  /// floor(N / stride_total).
  [[nodiscard]] std::size_t output_frames(std::size_t n) const { return n / stride_total; }
  /// Every layer's output for features x1 [F x N]; each is [N_f x D_f].
  [[nodiscard]] std::vector<Tensor> layer_outputs(const Tensor& x1) const;
  /// Sum of squared entries of every parameter gradient buffer.
  [[nodiscard]] double grad_norm_sq() const;
  /// Flattened copy of every parameter value, for frozen-state comparisons.
  [[nodiscard]] std::vector<double> snapshot() const;
};

/// First layer: kernel 3, stride 2, padding (1, 0), so N_f = floor(N / 2).
/// Remaining layers: kernel 3, stride 1, padding (1, 1). GELU between layers.
FrozenExtractor make_extractor(std::size_t input_dim, std::size_t output_dim, std::size_t num_layers,
                               std::uint64_t seed);

enum class TargetSelection { last, avg };
TargetSelection parse_target_selection(const std::string& name);
std::string target_selection_name(TargetSelection s);

/// Targets from the clean features x1 [F x N]: the last layer output, or the
/// mean over all layers. Gradient-free. Throws DomainError when N_f == 0.
Tensor extract_targets(const FrozenExtractor& f, const Tensor& x1, TargetSelection selection);

/// Endpoint-aligned linear resampling matrix [N_f x N]: row j samples
/// coordinate j (N - 1) / (N_f - 1), or (N - 1) / 2 when N_f == 1.
Tensor interp_matrix(std::size_t n, std::size_t n_f);
/// h [N x D] -> [N_f x D]. Throws DomainError for N < 2 or N_f == 0.
Tensor interp_linear(const Tensor& h, std::size_t n_f);

/// Interpolation followed by a kernel-3, zero-padded "same" convolution D_h -> D_f.
struct AlignProjector {
  Tensor weight;  // [(3 * D_h) x D_f]
  Tensor bias;    // [D_f]

  [[nodiscard]] Tensor apply(const Tensor& hidden, std::size_t n_f) const;
};

AlignProjector make_align_projector(numerics::ParamStore& store, const std::string& prefix, std::size_t width,
                                    std::size_t target_dim, double init_std, numerics::Rng& rng);
AlignProjector bind_align_projector(const numerics::ParamStore& store, const std::string& prefix);

enum class SpeechVariant { neg_cos, l1, logsig_cos };
SpeechVariant parse_speech_variant(const std::string& name);
std::string speech_variant_name(SpeechVariant v);

/// Loss between projected states h and targets, both [N_f x D_f]:
///   neg_cos    -mean_n cos(h[n], target[n])
///   l1         mean |h - target| over all entries
///   logsig_cos -mean_n log sigmoid(cos(h[n], target[n]))
/// `eps` guards the cosine denominators; eps = 0 turns zero-norm frames into a DomainError.
Tensor speech_loss(const Tensor& h, const Tensor& target, SpeechVariant variant, double eps = 1e-8);

/// proj.apply(hidden, N_f) followed by speech_loss.
Tensor speech_align_loss(const Tensor& hidden, const AlignProjector& proj, const Tensor& target,
                         SpeechVariant variant, double eps = 1e-8);

}  // namespace adma::align
