#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "adma/align/ctc.hpp"
#include "adma/align/speech.hpp"
#include "adma/corpus/corpus.hpp"
#include "adma/flow/flow.hpp"
#include "adma/io/config.hpp"
#include "adma/model/model.hpp"
#include "adma/numerics/params.hpp"

namespace adma::train {

using numerics::ParamStore;
using numerics::Tensor;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct TrainConfig {
  double lambda_text = 0.1;
  double lambda_speech = 1.0;
  bool enable_text = true;
  bool enable_speech = true;
  double lr_peak = 7.5e-4;
  std::size_t warmup_updates = 500;
  std::size_t total_updates = 5000;
  std::size_t batch_size = 16;
  double ema_decay = 0.999;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  AdamConfig adam;
  bool cfm_masked_only = true;
  align::TextReduction text_reduction = align::TextReduction::raw;
  align::SpeechVariant speech_variant = align::SpeechVariant::neg_cos;
  align::TargetSelection target_selection = align::TargetSelection::last;
  std::size_t extractor_layers = 3;
  std::size_t extractor_dim = 32;
  std::size_t eval_interval = 500;  // 0 evaluates only after the last update
  flow::SamplerConfig sampler;
  std::uint64_t seed = 0;
  bool log_wall_time = false;

  void validate() const;
};

/// `train.*` and `sampler.*` keys.
TrainConfig train_config_from(const io::Config& cfg, TrainConfig base = {});
void write_train_config(const TrainConfig& c, io::Config& out);

/// Every key understood by corpus_config_from, model_config_from and train_config_from.
const std::vector<std::string>& known_config_keys();

struct LossBreakdown {
  std::size_t step = 0;
  double l_cfm = 0.0;
  double l_text = 0.0;
  double l_speech = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
};

/// l_cfm + lambda_text * l_text + lambda_speech * l_speech, evaluated in that order.
double combine_losses(double l_cfm, double l_text, double l_speech, double lambda_text, double lambda_speech);

/// Linear warmup 0 -> lr_peak over warmup_updates, then linear decay to 0 at total_updates.
double lr_schedule(std::size_t step, const TrainConfig& cfg);

/// First and second moments, one entry per parameter tensor.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;  // completed updates
};

AdamState make_adam_state(const std::vector<Tensor>& params);

/// Decoupled weight decay: p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p).
/// Gradients are read from each tensor's buffer (zeros when absent).
/// Throws DomainError for lr < 0.
void adamw_update(std::vector<Tensor>& params, AdamState& state, double lr, const AdamConfig& cfg);

/// ema <- decay ema + (1 - decay) params.
void ema_update(ParamStore& ema, const ParamStore& params, double decay);

/// Scales every gradient so their joint L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

/// Everything that evolves during training.
struct TrainState {
  model::Model model;
  model::Model ema;
  ParamStore heads;  // "ctc.*" and "align.*"
  AdamState adam;
  std::size_t step = 0;  // completed updates

  [[nodiscard]] std::vector<Tensor> trainable() const;
};

/// Fresh state. Model, heads and EMA are initialised from streams derived from cfg.seed.
TrainState make_train_state(const model::ModelConfig& mcfg, const TrainConfig& cfg);

/// Per-utterance randomness of one training item.
struct ItemDraw {
  std::size_t index = 0;  // into corpus.train
  corpus::TemporalMask mask;
  flow::FlowSample sample;
};

/// Deterministic function of (seed, step): batch indices, masks, noise and times.
std::vector<ItemDraw> draw_batch(const corpus::Corpus& corpus, const TrainConfig& cfg, std::size_t step);

/// Losses for a fixed batch. Returned tensors are undefined for disabled terms.
struct StepLosses {
  Tensor cfm;
  Tensor text;
  Tensor speech;
  Tensor total;
  LossBreakdown values;
};

/// Frozen targets for every training utterance, computed once.
struct TargetCache {
  align::FrozenExtractor extractor;
  std::vector<Tensor> train;
};
TargetCache build_target_cache(const corpus::Corpus& corpus, const TrainConfig& cfg);

StepLosses compute_losses(const model::Model& m, const ParamStore& heads, const corpus::Corpus& corpus,
                          const TargetCache& targets, const std::vector<ItemDraw>& batch, const TrainConfig& cfg);

/// One update: draw batch for state.step + 1, losses, backward, clip, AdamW, EMA.
/// Throws NonFiniteError naming the term when a loss is not finite.
LossBreakdown train_step(TrainState& state, const corpus::Corpus& corpus, const TargetCache& targets,
                         const TrainConfig& cfg);

/// Checkpoint: "ADMAC" | u32 version | config text | u64 step | model params |
/// head params | EMA params | Adam t | per tensor m, v.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const io::Config& config);
TrainState load_checkpoint(const std::filesystem::path& path, const model::ModelConfig& mcfg, const TrainConfig& cfg);

}  // namespace adma::train
