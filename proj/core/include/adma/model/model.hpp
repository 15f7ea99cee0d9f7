#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adma/corpus/corpus.hpp"
#include "adma/io/binary.hpp"
#include "adma/io/config.hpp"
#include "adma/numerics/ops.hpp"
#include "adma/numerics/params.hpp"
#include "adma/numerics/tensor.hpp"

namespace adma::model {

using corpus::TokenSeq;
using numerics::ParamStore;
using numerics::Tensor;

struct ModelConfig {
  std::size_t num_layers = 8;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t text_refine_layers = 2;
  std::size_t text_conv_kernel = 7;
  std::size_t mlp_ratio = 2;
  std::size_t vocab = 13;        // content symbols + filler
  std::size_t feature_dim = 16;
  std::size_t text_tap = 4;      // 1-based block index
  std::size_t speech_tap = 7;
  double init_std = 0.02;

  /// Throws ConfigError on zero sizes, width % heads != 0, even conv kernel or taps outside [1, L].
  void validate() const;
};

/// `model.*` keys. Callers building from a corpus overwrite vocab and feature_dim.
ModelConfig model_config_from(const io::Config& cfg, ModelConfig base = {});
void write_model_config(const ModelConfig& c, io::Config& out);
/// Two blocks of width 8, taps 1 and 2: the profile used for finite-difference checks.
ModelConfig tiny_profile(std::size_t vocab, std::size_t feature_dim);

/// One utterance presented to the backbone. psi and x_m are [F x N].
struct ModelInput {
  Tensor psi;
  Tensor x_m;
  TokenSeq padded_tokens;
  double t = 0.0;
};

struct ModelOutput {
  Tensor v;                              // [F x N]
  std::map<std::size_t, Tensor> hidden;  // block index -> [N x D_h]
};

struct BatchOutput {
  std::vector<Tensor> v;
  std::map<std::size_t, std::vector<Tensor>> hidden;
};

struct ForwardOptions {
  /// Blocks whose post-residual output is returned. Empty means no taps.
  std::vector<std::size_t> taps;
  /// Receives every block's attention rows when set.
  numerics::AttentionProbe* probe = nullptr;
};

/// Diffusion-transformer backbone with adaptive layer-norm time conditioning.
///
/// Frames of all batch items are packed into one [R x D] matrix; attention and
/// the text convolutions are confined to each item's own rows.
class Model {
 public:
  /// Fresh parameters: truncated normal(init_std), layer-norm-free biases zero,
  /// output projection zero so v is identically 0 before training.
  Model(const ModelConfig& cfg, std::uint64_t seed);
  /// Binds to existing parameters (names and shapes must match the config).
  Model(const ModelConfig& cfg, ParamStore params);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] ParamStore& params() noexcept { return params_; }
  [[nodiscard]] const ParamStore& params() const noexcept { return params_; }

  /// Text embedding lookup plus ConvNeXt-style refinement: [N x D_h].
  [[nodiscard]] Tensor embed_text(const TokenSeq& padded_tokens) const;
  /// Sinusoidal features of t followed by a SiLU MLP: [D_h]. t must lie in [0, 1].
  [[nodiscard]] Tensor embed_time(double t) const;
  /// Same as embed_time but differentiable in a [B] tensor of times; [B x D_h].
  [[nodiscard]] Tensor embed_time(const Tensor& t) const;

  [[nodiscard]] BatchOutput forward_batch(const std::vector<ModelInput>& batch, const ForwardOptions& opts = {}) const;
  [[nodiscard]] ModelOutput forward(const ModelInput& input, const ForwardOptions& opts = {}) const;

 private:
  struct Refine {
    Tensor dw, dw_b, pw1, pw1_b, pw2, pw2_b;
  };
  struct Block {
    Tensor mod_w, mod_b, qkv_w, qkv_b, out_w, out_b, mlp1_w, mlp1_b, mlp2_w, mlp2_b;
  };

  void init(std::uint64_t seed);
  void bind();
  [[nodiscard]] Tensor embed_text_packed(const std::vector<std::size_t>& ids, const std::vector<std::size_t>& segments) const;
  [[nodiscard]] Tensor time_mlp(const Tensor& features) const;

  ModelConfig cfg_;
  ParamStore params_;

  Tensor text_embed_;
  std::vector<Refine> refine_;
  Tensor time_w1_, time_b1_, time_w2_, time_b2_;
  Tensor in_w_, in_b_;
  std::vector<Block> blocks_;
  Tensor final_mod_w_, final_mod_b_, final_w_, final_b_;
};

/// Fixed absolute position features for n frames: [n x width], sinusoids whose
/// periods advance by quarter octaves from 2 frames upward.
Tensor position_features(std::size_t n, std::size_t width);

/// Serialises every parameter: u32 count, then per tensor name, u32 rank,
/// u32 dims, f64 data.
void write_params(io::BinaryWriter& w, const ParamStore& params);
/// Reads into `params`, which must already hold the same names and shapes.
void read_params(io::BinaryReader& r, ParamStore& params);

/// Standalone model file: "ADMAM" | u32 version | config text | parameters.
void save_model(const std::filesystem::path& path, const Model& m);
Model load_model(const std::filesystem::path& path);

}  // namespace adma::model
