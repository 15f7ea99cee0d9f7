#include "adma/train/trainer.hpp"

#include <cmath>
#include <string>

#include "adma/error.hpp"
#include "adma/io/binary.hpp"
#include "adma/numerics/ops.hpp"

namespace adma::train {

namespace ops = numerics;

namespace {

// Stream ids for derive_seed.
constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kHeadStream = 2;
constexpr std::uint64_t kBatchStream = 3;
constexpr std::uint64_t kItemStream = 4;

constexpr std::uint32_t kCheckpointVersion = 1;

std::size_t size_key(const io::Config& cfg, const char* key, std::size_t fallback) {
  const auto v = cfg.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
  return static_cast<std::size_t>(v);
}

void require_finite(double v, const char* term, std::size_t step) {
  if (!std::isfinite(v)) {
    throw NonFiniteError("train step " + std::to_string(step) + ": " + term + " is " + std::to_string(v));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda_text >= 0.0) || !(lambda_speech >= 0.0)) throw ConfigError("train: loss weights must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema_decay must lie in [0, 1)");
  if (total_updates == 0) throw ConfigError("train: total_updates must be >= 1");
  if (warmup_updates > total_updates) throw ConfigError("train: warmup_updates exceeds total_updates");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr_peak >= 0.0)) throw ConfigError("train: lr_peak must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (extractor_layers == 0 || extractor_dim == 0) throw ConfigError("train: extractor sizes must be >= 1");
  sampler.validate();
}

TrainConfig train_config_from(const io::Config& cfg, TrainConfig base) {
  base.lambda_text = cfg.get_double("train.lambda_text", base.lambda_text);
  base.lambda_speech = cfg.get_double("train.lambda_speech", base.lambda_speech);
  base.enable_text = cfg.get_bool("train.enable_text", base.enable_text);
  base.enable_speech = cfg.get_bool("train.enable_speech", base.enable_speech);
  base.lr_peak = cfg.get_double("train.lr_peak", base.lr_peak);
  base.warmup_updates = size_key(cfg, "train.warmup_updates", base.warmup_updates);
  base.total_updates = size_key(cfg, "train.total_updates", base.total_updates);
  base.batch_size = size_key(cfg, "train.batch_size", base.batch_size);
  base.ema_decay = cfg.get_double("train.ema_decay", base.ema_decay);
  base.grad_clip = cfg.get_double("train.grad_clip", base.grad_clip);
  base.adam.beta1 = cfg.get_double("train.adam_beta1", base.adam.beta1);
  base.adam.beta2 = cfg.get_double("train.adam_beta2", base.adam.beta2);
  base.adam.eps = cfg.get_double("train.adam_eps", base.adam.eps);
  base.adam.weight_decay = cfg.get_double("train.weight_decay", base.adam.weight_decay);
  base.cfm_masked_only = cfg.get_bool("train.cfm_masked_only", base.cfm_masked_only);
  if (cfg.has("train.text_reduction")) {
    base.text_reduction = align::parse_text_reduction(cfg.get_string("train.text_reduction", ""));
  }
  if (cfg.has("train.speech_variant")) {
    base.speech_variant = align::parse_speech_variant(cfg.get_string("train.speech_variant", ""));
  }
  if (cfg.has("train.target_selection")) {
    base.target_selection = align::parse_target_selection(cfg.get_string("train.target_selection", ""));
  }
  base.extractor_layers = size_key(cfg, "train.extractor_layers", base.extractor_layers);
  base.extractor_dim = size_key(cfg, "train.extractor_dim", base.extractor_dim);
  base.eval_interval = size_key(cfg, "train.eval_interval", base.eval_interval);
  base.seed = cfg.get_u64("train.seed", base.seed);
  base.log_wall_time = cfg.get_bool("train.log_wall_time", base.log_wall_time);
  if (cfg.has("sampler.solver")) base.sampler.solver = flow::parse_solver(cfg.get_string("sampler.solver", ""));
  base.sampler.nfe_steps = size_key(cfg, "sampler.nfe_steps", base.sampler.nfe_steps);
  base.sampler.sway = cfg.get_double("sampler.sway", base.sampler.sway);
  base.validate();
  return base;
}

void write_train_config(const TrainConfig& c, io::Config& out) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  out.set("train.lambda_text", io::format_double(c.lambda_text));
  out.set("train.lambda_speech", io::format_double(c.lambda_speech));
  out.set("train.enable_text", b(c.enable_text));
  out.set("train.enable_speech", b(c.enable_speech));
  out.set("train.lr_peak", io::format_double(c.lr_peak));
  out.set("train.warmup_updates", std::to_string(c.warmup_updates));
  out.set("train.total_updates", std::to_string(c.total_updates));
  out.set("train.batch_size", std::to_string(c.batch_size));
  out.set("train.ema_decay", io::format_double(c.ema_decay));
  out.set("train.grad_clip", io::format_double(c.grad_clip));
  out.set("train.adam_beta1", io::format_double(c.adam.beta1));
  out.set("train.adam_beta2", io::format_double(c.adam.beta2));
  out.set("train.adam_eps", io::format_double(c.adam.eps));
  out.set("train.weight_decay", io::format_double(c.adam.weight_decay));
  out.set("train.cfm_masked_only", b(c.cfm_masked_only));
  out.set("train.text_reduction", align::text_reduction_name(c.text_reduction));
  out.set("train.speech_variant", align::speech_variant_name(c.speech_variant));
  out.set("train.target_selection", align::target_selection_name(c.target_selection));
  out.set("train.extractor_layers", std::to_string(c.extractor_layers));
  out.set("train.extractor_dim", std::to_string(c.extractor_dim));
  out.set("train.eval_interval", std::to_string(c.eval_interval));
  out.set("train.seed", std::to_string(c.seed));
  out.set("train.log_wall_time", b(c.log_wall_time));
  out.set("sampler.solver", flow::solver_name(c.sampler.solver));
  out.set("sampler.nfe_steps", std::to_string(c.sampler.nfe_steps));
  out.set("sampler.sway", io::format_double(c.sampler.sway));
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "corpus.vocab_size", "corpus.feature_dim", "corpus.frames_per_token", "corpus.num_speakers",
      "corpus.min_tokens", "corpus.max_tokens", "corpus.noise_std", "corpus.offset_std", "corpus.num_train",
      "corpus.eval_per_speaker", "corpus.mask_ratio_lo", "corpus.mask_ratio_hi", "corpus.seed",
      "model.num_layers", "model.width", "model.heads", "model.text_refine_layers", "model.text_conv_kernel",
      "model.mlp_ratio", "model.vocab", "model.feature_dim", "model.text_tap", "model.speech_tap", "model.init_std",
      "train.lambda_text", "train.lambda_speech", "train.enable_text", "train.enable_speech", "train.lr_peak",
      "train.warmup_updates", "train.total_updates", "train.batch_size", "train.ema_decay", "train.grad_clip",
      "train.adam_beta1", "train.adam_beta2", "train.adam_eps", "train.weight_decay", "train.cfm_masked_only",
      "train.text_reduction", "train.speech_variant", "train.target_selection", "train.extractor_layers",
      "train.extractor_dim", "train.eval_interval", "train.seed", "train.log_wall_time", "sampler.solver",
      "sampler.nfe_steps", "sampler.sway"};
  return keys;
}

double combine_losses(double l_cfm, double l_text, double l_speech, double lambda_text, double lambda_speech) {
  return (l_cfm + l_text * lambda_text) + l_speech * lambda_speech;
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  const auto s = static_cast<double>(step);
  if (step <= cfg.warmup_updates) {
    return cfg.warmup_updates == 0 ? cfg.lr_peak : cfg.lr_peak * s / static_cast<double>(cfg.warmup_updates);
  }
  if (step >= cfg.total_updates) return 0.0;
  const auto span = static_cast<double>(cfg.total_updates - cfg.warmup_updates);
  return cfg.lr_peak * (static_cast<double>(cfg.total_updates) - s) / span;
}

AdamState make_adam_state(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adamw_update(std::vector<Tensor>& params, AdamState& state, double lr, const AdamConfig& cfg) {
  if (!(lr >= 0.0)) throw DomainError("adamw_update: learning rate " + std::to_string(lr) + " is negative");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adamw_update: optimizer state holds " + std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(params.size()));
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size() || v.size() != p.size()) {
      throw DimensionError("adamw_update: state size mismatch for tensor " + std::to_string(i));
    }
    const auto& g = params[i].node()->grad;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p[j]);
    }
  }
}

void ema_update(ParamStore& ema, const ParamStore& params, double decay) {
  if (ema.names() != params.names()) throw DimensionError("ema_update: parameter lists differ");
  for (std::size_t i = 0; i < ema.size(); ++i) {
    auto e = ema.tensors()[i].mutable_data();
    const auto p = params.tensors()[i].data();
    if (e.size() != p.size()) throw DimensionError("ema_update: shape mismatch for '" + ema.names()[i] + "'");
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = decay * e[j] + (1.0 - decay) * p[j];
  }
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.node()->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      for (double& g : p.node()->grad) g *= factor;
    }
  }
  return norm;
}

std::vector<Tensor> TrainState::trainable() const {
  std::vector<Tensor> out(model.params().tensors().begin(), model.params().tensors().end());
  out.insert(out.end(), heads.tensors().begin(), heads.tensors().end());
  return out;
}

TrainState make_train_state(const model::ModelConfig& mcfg, const TrainConfig& cfg) {
  mcfg.validate();
  cfg.validate();
  model::Model m(mcfg, numerics::derive_seed(cfg.seed, {kModelStream}));
  model::Model ema = m;
  for (auto& t : ema.params().tensors()) t.set_requires_grad(false);
  ParamStore heads;
  numerics::Rng rng(numerics::derive_seed(cfg.seed, {kHeadStream}));
  (void)align::make_ctc_head(heads, "ctc", mcfg.width, mcfg.vocab - 1, mcfg.init_std, rng);
  (void)align::make_align_projector(heads, "align", mcfg.width, cfg.extractor_dim, mcfg.init_std, rng);
  TrainState state{std::move(m), std::move(ema), std::move(heads), {}, 0};
  state.adam = make_adam_state(state.trainable());
  return state;
}

std::vector<ItemDraw> draw_batch(const corpus::Corpus& corpus, const TrainConfig& cfg, std::size_t step) {
  if (corpus.train.empty()) throw DimensionError("draw_batch: corpus has no training utterances");
  numerics::Rng pick(numerics::derive_seed(cfg.seed, {kBatchStream, step}));
  std::vector<ItemDraw> out(cfg.batch_size);
  for (auto& d : out) d.index = pick.below(corpus.train.size());
  for (std::size_t b = 0; b < out.size(); ++b) {
    numerics::Rng rng(numerics::derive_seed(cfg.seed, {kItemStream, step, b}));
    const auto& utt = corpus.train[out[b].index];
    out[b].mask = corpus::sample_mask(utt.num_frames(), corpus.config.mask_ratio_lo, corpus.config.mask_ratio_hi, rng);
    out[b].sample = flow::make_flow_sample(utt.features, rng);
  }
  return out;
}

TargetCache build_target_cache(const corpus::Corpus& corpus, const TrainConfig& cfg) {
  TargetCache cache{align::make_extractor(corpus.config.feature_dim, cfg.extractor_dim, cfg.extractor_layers, cfg.seed),
                    {}};
  cache.train.reserve(corpus.train.size());
  for (const auto& utt : corpus.train) {
    cache.train.push_back(align::extract_targets(cache.extractor, utt.features, cfg.target_selection));
  }
  return cache;
}

StepLosses compute_losses(const model::Model& m, const ParamStore& heads, const corpus::Corpus& corpus,
                          const TargetCache& targets, const std::vector<ItemDraw>& batch, const TrainConfig& cfg) {
  if (batch.empty()) throw DimensionError("compute_losses: empty batch");
  const auto& mcfg = m.config();
  std::vector<model::ModelInput> inputs;
  inputs.reserve(batch.size());
  for (const auto& d : batch) {
    const auto& utt = corpus.train.at(d.index);
    inputs.push_back({d.sample.psi, corpus::apply_mask(utt.features, d.mask), utt.padded_tokens, d.sample.t});
  }
  model::ForwardOptions opts;
  if (cfg.enable_text) opts.taps.push_back(mcfg.text_tap);
  if (cfg.enable_speech && !(cfg.enable_text && mcfg.speech_tap == mcfg.text_tap)) opts.taps.push_back(mcfg.speech_tap);
  const auto out = m.forward_batch(inputs, opts);

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  StepLosses s;
  std::vector<Tensor> terms;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    terms.push_back(flow::cfm_loss(out.v[b], batch[b].sample.target, batch[b].mask, cfg.cfm_masked_only));
  }
  s.cfm = ops::scale(ops::add_n(terms), inv_b);
  s.total = s.cfm;

  if (cfg.enable_text) {
    const auto head = align::bind_ctc_head(heads, "ctc");
    const auto& hidden = out.hidden.at(mcfg.text_tap);
    terms.clear();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      align::CtcResult r;
      try {
        r = align::text_align_loss(hidden[b], head, corpus.train[batch[b].index].tokens, cfg.text_reduction);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string("l_text is not finite: ") + e.what());
      }
      // Infeasible targets carry no gradient signal and are left out of the mean.
      if (r.feasible) terms.push_back(r.loss);
    }
    s.text = terms.empty() ? Tensor::scalar(0.0)
                           : ops::scale(ops::add_n(terms), 1.0 / static_cast<double>(terms.size()));
    s.total = ops::add(s.total, ops::scale(s.text, cfg.lambda_text));
  }
  if (cfg.enable_speech) {
    const auto proj = align::bind_align_projector(heads, "align");
    const auto& hidden = out.hidden.at(mcfg.speech_tap);
    terms.clear();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      terms.push_back(
          align::speech_align_loss(hidden[b], proj, targets.train.at(batch[b].index), cfg.speech_variant));
    }
    s.speech = ops::scale(ops::add_n(terms), inv_b);
    s.total = ops::add(s.total, ops::scale(s.speech, cfg.lambda_speech));
  }

  s.values.l_cfm = s.cfm.item();
  s.values.l_text = s.text.defined() ? s.text.item() : 0.0;
  s.values.l_speech = s.speech.defined() ? s.speech.item() : 0.0;
  s.values.l_total = s.total.item();
  return s;
}

LossBreakdown train_step(TrainState& state, const corpus::Corpus& corpus, const TargetCache& targets,
                         const TrainConfig& cfg) {
  const std::size_t step = state.step + 1;
  const auto batch = draw_batch(corpus, cfg, step);
  auto params = state.trainable();
  for (auto& p : params) p.zero_grad();

  auto losses = compute_losses(state.model, state.heads, corpus, targets, batch, cfg);
  require_finite(losses.values.l_cfm, "l_cfm", step);
  require_finite(losses.values.l_text, "l_text", step);
  require_finite(losses.values.l_speech, "l_speech", step);
  require_finite(losses.values.l_total, "l_total", step);
  losses.total.backward();

  clip_grad_norm(params, cfg.grad_clip);
  const double lr = lr_schedule(step, cfg);
  adamw_update(params, state.adam, lr, cfg.adam);
  for (auto& p : params) p.zero_grad();
  ema_update(state.ema.params(), state.model.params(), cfg.ema_decay);
  state.step = step;

  losses.values.step = step;
  losses.values.lr = lr;
  return losses.values;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const io::Config& config) {
  io::BinaryWriter w;
  w.bytes("ADMAC");
  w.u32(kCheckpointVersion);
  w.str(config.to_text());
  w.u64(state.step);
  model::write_params(w, state.model.params());
  model::write_params(w, state.heads);
  model::write_params(w, state.ema.params());
  w.u64(state.adam.t);
  for (std::size_t i = 0; i < state.adam.m.size(); ++i) {
    w.f64s(state.adam.m[i]);
    w.f64s(state.adam.v[i]);
  }
  w.save(path);
}

TrainState load_checkpoint(const std::filesystem::path& path, const model::ModelConfig& mcfg, const TrainConfig& cfg) {
  auto r = io::BinaryReader::open(path);
  r.expect_magic("ADMAC");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  (void)r.str();
  auto state = make_train_state(mcfg, cfg);
  state.step = r.u64();
  model::read_params(r, state.model.params());
  model::read_params(r, state.heads);
  model::read_params(r, state.ema.params());
  state.adam.t = r.u64();
  for (std::size_t i = 0; i < state.adam.m.size(); ++i) {
    state.adam.m[i] = r.f64s(state.adam.m[i].size());
    state.adam.v[i] = r.f64s(state.adam.v[i].size());
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after optimizer state");
  return state;
}

}  // namespace adma::train
