#include "adma/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "adma/error.hpp"

namespace adma::corpus {

namespace {

constexpr int kMaxBankAttempts = 64;

// Stream tags for derive_seed, so distinct draws never share a stream.
constexpr std::uint64_t kTagTemplates = 1;
constexpr std::uint64_t kTagOffsets = 2;
constexpr std::uint64_t kTagTrainLayout = 3;
constexpr std::uint64_t kTagTrainNoise = 4;
constexpr std::uint64_t kTagEvalLayout = 5;
constexpr std::uint64_t kTagEvalNoise = 6;

}  // namespace

void CorpusConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("corpus.vocab_size must be >= 2");
  if (feature_dim < 4) throw ConfigError("corpus.feature_dim must be >= 4");
  if (frames_per_token < 1) throw ConfigError("corpus.frames_per_token must be >= 1");
  if (num_speakers < 1) throw ConfigError("corpus.num_speakers must be >= 1");
  if (min_tokens < 1 || min_tokens > max_tokens) throw ConfigError("corpus.min_tokens must lie in [1, max_tokens]");
  if (!(noise_std >= 0.0)) throw ConfigError("corpus.noise_std must be >= 0");
  if (!(offset_std >= 0.0)) throw ConfigError("corpus.offset_std must be >= 0");
  if (!(mask_ratio_lo > 0.0 && mask_ratio_lo <= mask_ratio_hi && mask_ratio_hi <= 1.0)) {
    throw ConfigError("corpus.mask_ratio_* must satisfy 0 < lo <= hi <= 1");
  }
}

CorpusConfig corpus_config_from(const io::Config& cfg, CorpusConfig base) {
  auto sz = [&](const char* key, std::size_t v) {
    const auto r = cfg.get_int(key, static_cast<std::int64_t>(v));
    if (r < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(r);
  };
  base.vocab_size = sz("corpus.vocab_size", base.vocab_size);
  base.feature_dim = sz("corpus.feature_dim", base.feature_dim);
  base.frames_per_token = sz("corpus.frames_per_token", base.frames_per_token);
  base.num_speakers = sz("corpus.num_speakers", base.num_speakers);
  base.min_tokens = sz("corpus.min_tokens", base.min_tokens);
  base.max_tokens = sz("corpus.max_tokens", base.max_tokens);
  base.noise_std = cfg.get_double("corpus.noise_std", base.noise_std);
  base.offset_std = cfg.get_double("corpus.offset_std", base.offset_std);
  base.num_train = sz("corpus.num_train", base.num_train);
  base.eval_per_speaker = sz("corpus.eval_per_speaker", base.eval_per_speaker);
  base.mask_ratio_lo = cfg.get_double("corpus.mask_ratio_lo", base.mask_ratio_lo);
  base.mask_ratio_hi = cfg.get_double("corpus.mask_ratio_hi", base.mask_ratio_hi);
  base.seed = cfg.get_u64("corpus.seed", base.seed);
  base.validate();
  return base;
}

void write_corpus_config(const CorpusConfig& c, io::Config& out) {
  out.set("corpus.vocab_size", std::to_string(c.vocab_size));
  out.set("corpus.feature_dim", std::to_string(c.feature_dim));
  out.set("corpus.frames_per_token", std::to_string(c.frames_per_token));
  out.set("corpus.num_speakers", std::to_string(c.num_speakers));
  out.set("corpus.min_tokens", std::to_string(c.min_tokens));
  out.set("corpus.max_tokens", std::to_string(c.max_tokens));
  out.set("corpus.noise_std", io::format_double(c.noise_std));
  out.set("corpus.offset_std", io::format_double(c.offset_std));
  out.set("corpus.num_train", std::to_string(c.num_train));
  out.set("corpus.eval_per_speaker", std::to_string(c.eval_per_speaker));
  out.set("corpus.mask_ratio_lo", io::format_double(c.mask_ratio_lo));
  out.set("corpus.mask_ratio_hi", io::format_double(c.mask_ratio_hi));
  out.set("corpus.seed", std::to_string(c.seed));
}

double SpeakerBank::template_at(std::size_t symbol, std::size_t channel, std::size_t frame) const {
  return templates[(symbol * feature_dim + channel) * frames_per_token + frame];
}

double SpeakerBank::offset_at(std::size_t speaker, std::size_t channel) const {
  return offsets[speaker * feature_dim + channel];
}

double SpeakerBank::min_template_distance() const {
  const std::size_t block = feature_dim * frames_per_token;
  const auto t = templates.data();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < vocab_size; ++a) {
    for (std::size_t b = a + 1; b < vocab_size; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < block; ++i) {
        const double diff = t[a * block + i] - t[b * block + i];
        s += diff * diff;
      }
      best = std::min(best, std::sqrt(s));
    }
  }
  return best;
}

SpeakerBank build_bank(const CorpusConfig& cfg) {
  cfg.validate();
  SpeakerBank bank;
  bank.vocab_size = cfg.vocab_size;
  bank.feature_dim = cfg.feature_dim;
  bank.frames_per_token = cfg.frames_per_token;
  bank.num_speakers = cfg.num_speakers;
  const double margin =
      4.0 * cfg.noise_std * std::sqrt(static_cast<double>(cfg.feature_dim * cfg.frames_per_token));
  const std::size_t n = cfg.vocab_size * cfg.feature_dim * cfg.frames_per_token;
  for (int attempt = 0; attempt < kMaxBankAttempts; ++attempt) {
    numerics::Rng rng(numerics::derive_seed(cfg.seed, {kTagTemplates, static_cast<std::uint64_t>(attempt)}));
    std::vector<double> values(n);
    for (double& v : values) v = rng.normal();
    bank.templates = Tensor::from({cfg.vocab_size, cfg.feature_dim, cfg.frames_per_token}, std::move(values));
    if (bank.min_template_distance() > margin) {
      numerics::Rng orng(numerics::derive_seed(cfg.seed, {kTagOffsets}));
      std::vector<double> offs(cfg.num_speakers * cfg.feature_dim);
      for (double& v : offs) v = orng.normal(0.0, cfg.offset_std);
      bank.offsets = Tensor::from({cfg.num_speakers, cfg.feature_dim}, std::move(offs));
      return bank;
    }
  }
  throw std::runtime_error("build_bank: could not draw distinguishable templates in " +
                           std::to_string(kMaxBankAttempts) + " attempts (F*d too small for K at this noise level)");
}

Utterance synthesize(const SpeakerBank& bank, const TokenSeq& tokens, std::size_t speaker_id, double noise_std,
                     std::uint64_t seed) {
  if (tokens.empty()) throw DomainError("synthesize: empty token sequence");
  if (speaker_id >= bank.num_speakers) {
    throw DomainError("synthesize: speaker " + std::to_string(speaker_id) + " out of range");
  }
  for (std::size_t tok : tokens) {
    if (tok >= bank.vocab_size) throw DomainError("synthesize: token " + std::to_string(tok) + " out of range");
  }
  const std::size_t f = bank.feature_dim;
  const std::size_t d = bank.frames_per_token;
  const std::size_t n = tokens.size() * d;
  numerics::Rng rng(seed);
  std::vector<double> x(f * n);
  for (std::size_t c = 0; c < f; ++c) {
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      for (std::size_t k = 0; k < d; ++k) {
        double v = bank.template_at(tokens[t], c, k) + bank.offset_at(speaker_id, c);
        if (noise_std > 0.0) v += rng.normal(0.0, noise_std);
        x[c * n + t * d + k] = v;
      }
    }
  }
  Utterance u;
  u.tokens = tokens;
  u.features = Tensor::from({f, n}, std::move(x));
  u.speaker = speaker_id;
  u.padded_tokens = tokens;
  u.padded_tokens.resize(n, bank.vocab_size);
  u.mask.assign(n, 0);
  return u;
}

TemporalMask sample_mask(std::size_t num_frames, double ratio_lo, double ratio_hi, numerics::Rng& rng) {
  if (num_frames == 0) throw DomainError("sample_mask: zero frames");
  if (!(ratio_lo > 0.0 && ratio_lo <= ratio_hi && ratio_hi <= 1.0)) {
    throw DomainError("sample_mask: ratio range must satisfy 0 < lo <= hi <= 1");
  }
  const double r = ratio_lo == ratio_hi ? ratio_lo : rng.uniform(ratio_lo, ratio_hi);
  auto span = static_cast<std::size_t>(std::llround(r * static_cast<double>(num_frames)));
  span = std::clamp<std::size_t>(span, 1, num_frames);
  const std::size_t start = rng.below(num_frames - span + 1);
  TemporalMask m(num_frames, 0);
  std::fill(m.begin() + static_cast<std::ptrdiff_t>(start), m.begin() + static_cast<std::ptrdiff_t>(start + span), 1);
  return m;
}

TemporalMask sample_mask(std::size_t num_frames, double ratio_lo, double ratio_hi, std::uint64_t seed) {
  numerics::Rng rng(seed);
  return sample_mask(num_frames, ratio_lo, ratio_hi, rng);
}

Tensor apply_mask(const Tensor& x1, const TemporalMask& mask) {
  if (x1.rank() != 2 || x1.dim(1) != mask.size()) {
    throw DimensionError("apply_mask: features " + numerics::shape_str(x1.shape()) + " vs mask of " +
                         std::to_string(mask.size()) + " frames");
  }
  const std::size_t f = x1.dim(0);
  const std::size_t n = x1.dim(1);
  std::vector<double> out(x1.data().begin(), x1.data().end());
  for (std::size_t c = 0; c < f; ++c) {
    for (std::size_t t = 0; t < n; ++t) {
      if (mask[t]) out[c * n + t] = 0.0;
    }
  }
  return Tensor::from({f, n}, std::move(out));
}

std::size_t mask_count(const TemporalMask& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

DecodeResult decode_features(const SpeakerBank& bank, const Tensor& x) {
  const std::size_t f = bank.feature_dim;
  const std::size_t d = bank.frames_per_token;
  if (x.rank() != 2 || x.dim(0) != f) {
    throw DimensionError("decode_features: expected [" + std::to_string(f) + " x N], got " +
                         numerics::shape_str(x.shape()));
  }
  const std::size_t n = x.dim(1);
  if (n % d != 0) {
    throw DimensionError("decode_features: " + std::to_string(n) + " frames not divisible by " + std::to_string(d));
  }
  const std::size_t blocks = n / d;
  const auto xd = x.data();
  DecodeResult best;
  double best_total = std::numeric_limits<double>::infinity();
  TokenSeq tokens(blocks);
  for (std::size_t s = 0; s < bank.num_speakers; ++s) {
    double total = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      double best_block = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t k = 0; k < bank.vocab_size; ++k) {
        double r = 0.0;
        for (std::size_t c = 0; c < f; ++c) {
          const double off = bank.offset_at(s, c);
          for (std::size_t j = 0; j < d; ++j) {
            const double diff = xd[c * n + b * d + j] - off - bank.template_at(k, c, j);
            r += diff * diff;
          }
        }
        if (r < best_block) {
          best_block = r;
          arg = k;
        }
      }
      tokens[b] = arg;
      total += best_block;
    }
    if (total < best_total) {
      best_total = total;
      best.tokens = tokens;
      best.speaker = s;
    }
  }
  return best;
}

std::vector<double> recover_offset(const SpeakerBank& bank, const Tensor& x, const TokenSeq& tokens) {
  const std::size_t f = bank.feature_dim;
  const std::size_t d = bank.frames_per_token;
  const std::size_t n = x.dim(1);
  if (x.dim(0) != f || tokens.size() * d != n) {
    throw DimensionError("recover_offset: features " + numerics::shape_str(x.shape()) + " vs " +
                         std::to_string(tokens.size()) + " tokens");
  }
  const auto xd = x.data();
  std::vector<double> off(f, 0.0);
  for (std::size_t c = 0; c < f; ++c) {
    for (std::size_t t = 0; t < n; ++t) off[c] += xd[c * n + t] - bank.template_at(tokens[t / d], c, t % d);
    off[c] /= static_cast<double>(n);
  }
  return off;
}

Tensor slice_frames(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t f = x.dim(0);
  const std::size_t n = x.dim(1);
  if (begin >= end || end > n) throw DimensionError("slice_frames: invalid frame range");
  std::vector<double> out(f * (end - begin));
  const auto xd = x.data();
  for (std::size_t c = 0; c < f; ++c) {
    std::copy(xd.begin() + static_cast<std::ptrdiff_t>(c * n + begin),
              xd.begin() + static_cast<std::ptrdiff_t>(c * n + end), out.begin() + static_cast<std::ptrdiff_t>(c * (end - begin)));
  }
  return Tensor::from({f, end - begin}, std::move(out));
}

namespace {

Utterance draw_utterance(const CorpusConfig& cfg, const SpeakerBank& bank, std::uint64_t layout_seed,
                         std::uint64_t noise_seed, std::optional<std::size_t> speaker) {
  numerics::Rng rng(layout_seed);
  const std::size_t len = cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1);
  TokenSeq tokens(len);
  for (auto& t : tokens) t = rng.below(cfg.vocab_size);
  const std::size_t spk = speaker ? *speaker : rng.below(cfg.num_speakers);
  return synthesize(bank, tokens, spk, cfg.noise_std, noise_seed);
}

}  // namespace

Corpus build_corpus(const CorpusConfig& cfg) {
  Corpus c;
  c.config = cfg;
  c.bank = build_bank(cfg);
  c.train.reserve(cfg.num_train);
  for (std::size_t i = 0; i < cfg.num_train; ++i) {
    c.train.push_back(draw_utterance(cfg, c.bank, numerics::derive_seed(cfg.seed, {kTagTrainLayout, i}),
                                     numerics::derive_seed(cfg.seed, {kTagTrainNoise, i}), std::nullopt));
  }
  for (std::size_t s = 0; s < cfg.num_speakers; ++s) {
    for (std::size_t j = 0; j < cfg.eval_per_speaker; ++j) {
      c.eval.push_back(draw_utterance(cfg, c.bank, numerics::derive_seed(cfg.seed, {kTagEvalLayout, s, j}),
                                      numerics::derive_seed(cfg.seed, {kTagEvalNoise, s, j}), s));
    }
  }
  return c;
}

}  // namespace adma::corpus
