#include "adma/align/speech.hpp"

#include <cmath>

#include "adma/error.hpp"
#include "adma/numerics/ops.hpp"
#include "adma/numerics/rng.hpp"

namespace adma::align {

namespace ops = numerics;

namespace {

constexpr std::uint64_t kExtractorStream = 0x5EEDF00Dull;

Tensor random_matrix(numerics::Rng& rng, std::size_t rows, std::size_t cols, double sd) {
  std::vector<double> d(rows * cols);
  for (auto& v : d) v = rng.normal(0.0, sd);
  return Tensor::from({rows, cols}, std::move(d));
}

}  // namespace

FrozenExtractor make_extractor(std::size_t input_dim, std::size_t output_dim, std::size_t num_layers,
                               std::uint64_t seed) {
  if (input_dim == 0 || output_dim == 0 || num_layers == 0) {
    throw ConfigError("extractor: dimensions and layer count must be positive");
  }
  numerics::Rng rng(numerics::derive_seed(seed, {kExtractorStream}));
  FrozenExtractor f;
  f.input_dim = input_dim;
  f.output_dim = output_dim;
  f.stride_total = 2;
  std::size_t c_in = input_dim;
  for (std::size_t j = 0; j < num_layers; ++j) {
    ExtractorLayer layer;
    layer.kernel = 3;
    layer.stride = j == 0 ? 2 : 1;
    layer.pad_left = 1;
    layer.pad_right = j == 0 ? 0 : 1;
    layer.weight = random_matrix(rng, 3 * c_in, output_dim, 1.0 / std::sqrt(3.0 * static_cast<double>(c_in)));
    layer.bias = ops::reshape(random_matrix(rng, 1, output_dim, 0.1), {output_dim});
    f.layers.push_back(std::move(layer));
    c_in = output_dim;
  }
  return f;
}

std::vector<Tensor> FrozenExtractor::layer_outputs(const Tensor& x1) const {
  if (x1.rank() != 2 || x1.dim(0) != input_dim) {
    throw DimensionError("extractor: expected [" + std::to_string(input_dim) + " x N] features, got " +
                         numerics::shape_str(x1.shape()));
  }
  if (output_frames(x1.dim(1)) == 0) {
    throw DomainError("extractor: " + std::to_string(x1.dim(1)) + " frames is too short for stride " +
                      std::to_string(stride_total));
  }
  numerics::NoGradGuard no_grad;
  std::vector<Tensor> outs;
  Tensor h = ops::transpose(x1);
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const auto& l = layers[j];
    h = ops::conv1d(h, l.weight, l.bias, l.kernel, l.stride, l.pad_left, l.pad_right);
    if (j + 1 < layers.size()) h = ops::gelu(h);
    outs.push_back(h);
  }
  return outs;
}

double FrozenExtractor::grad_norm_sq() const {
  double acc = 0.0;
  for (const auto& l : layers) {
    for (const auto* t : {&l.weight, &l.bias}) {
      for (double g : t->grad()) acc += g * g;
    }
  }
  return acc;
}

std::vector<double> FrozenExtractor::snapshot() const {
  std::vector<double> out;
  for (const auto& l : layers) {
    for (const auto* t : {&l.weight, &l.bias}) out.insert(out.end(), t->data().begin(), t->data().end());
  }
  return out;
}

TargetSelection parse_target_selection(const std::string& name) {
  if (name == "last") return TargetSelection::last;
  if (name == "avg") return TargetSelection::avg;
  throw ConfigError("unknown target selection '" + name + "' (expected last or avg)");
}

std::string target_selection_name(TargetSelection s) { return s == TargetSelection::last ? "last" : "avg"; }

Tensor extract_targets(const FrozenExtractor& f, const Tensor& x1, TargetSelection selection) {
  const auto outs = f.layer_outputs(x1);
  if (selection == TargetSelection::last) return outs.back().detach();
  numerics::NoGradGuard no_grad;
  return ops::scale(ops::add_n(outs), 1.0 / static_cast<double>(outs.size())).detach();
}

Tensor interp_matrix(std::size_t n, std::size_t n_f) {
  if (n < 2) throw DomainError("interp_linear: need at least 2 input frames, got " + std::to_string(n));
  if (n_f == 0) throw DomainError("interp_linear: output length must be positive");
  std::vector<double> w(n_f * n, 0.0);
  for (std::size_t j = 0; j < n_f; ++j) {
    const double pos = n_f == 1 ? static_cast<double>(n - 1) / 2.0
                                : static_cast<double>(j) * static_cast<double>(n - 1) / static_cast<double>(n_f - 1);
    const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), n - 1);
    const double frac = pos - static_cast<double>(lo);
    w[j * n + lo] = 1.0 - frac;
    if (frac > 0.0) w[j * n + lo + 1] = frac;
  }
  return Tensor::from({n_f, n}, std::move(w));
}

Tensor interp_linear(const Tensor& h, std::size_t n_f) {
  if (h.rank() != 2) throw DimensionError("interp_linear: expected [N x D], got " + numerics::shape_str(h.shape()));
  return ops::matmul(interp_matrix(h.dim(0), n_f), h);
}

Tensor AlignProjector::apply(const Tensor& hidden, std::size_t n_f) const {
  return ops::conv1d(interp_linear(hidden, n_f), weight, bias, 3, 1, 1, 1);
}

AlignProjector make_align_projector(numerics::ParamStore& store, const std::string& prefix, std::size_t width,
                                    std::size_t target_dim, double init_std, numerics::Rng& rng) {
  store.add_trunc_normal(prefix + ".weight", {3 * width, target_dim}, init_std, rng);
  store.add_zeros(prefix + ".bias", {target_dim});
  return bind_align_projector(store, prefix);
}

AlignProjector bind_align_projector(const numerics::ParamStore& store, const std::string& prefix) {
  return AlignProjector{store.get(prefix + ".weight"), store.get(prefix + ".bias")};
}

SpeechVariant parse_speech_variant(const std::string& name) {
  if (name == "neg_cos") return SpeechVariant::neg_cos;
  if (name == "l1") return SpeechVariant::l1;
  if (name == "logsig_cos") return SpeechVariant::logsig_cos;
  throw ConfigError("unknown speech loss variant '" + name + "' (expected neg_cos, l1 or logsig_cos)");
}

std::string speech_variant_name(SpeechVariant v) {
  switch (v) {
    case SpeechVariant::neg_cos: return "neg_cos";
    case SpeechVariant::l1: return "l1";
    case SpeechVariant::logsig_cos: return "logsig_cos";
  }
  return "neg_cos";
}

Tensor speech_loss(const Tensor& h, const Tensor& target, SpeechVariant variant, double eps) {
  if (h.shape() != target.shape() || h.rank() != 2) {
    throw DimensionError("speech_loss: projected " + numerics::shape_str(h.shape()) + " vs target " +
                         numerics::shape_str(target.shape()));
  }
  switch (variant) {
    case SpeechVariant::neg_cos:
      return ops::scale(ops::mean(ops::row_cosine(h, target, eps)), -1.0);
    case SpeechVariant::l1:
      return ops::mean(ops::abs(ops::sub(h, target)));
    case SpeechVariant::logsig_cos:
      return ops::scale(ops::mean(ops::log_sigmoid(ops::row_cosine(h, target, eps))), -1.0);
  }
  throw DomainError("speech_loss: unknown variant");
}

Tensor speech_align_loss(const Tensor& hidden, const AlignProjector& proj, const Tensor& target,
                         SpeechVariant variant, double eps) {
  return speech_loss(proj.apply(hidden, target.dim(0)), target, variant, eps);
}

}  // namespace adma::align
