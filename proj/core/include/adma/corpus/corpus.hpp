#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "adma/io/config.hpp"
#include "adma/numerics/rng.hpp"
#include "adma/numerics/tensor.hpp"

namespace adma::corpus {

using numerics::Tensor;
using TokenSeq = std::vector<std::size_t>;
/// Temporal mask over N frames; 1 = masked (to be generated), 0 = kept as context.
using TemporalMask = std::vector<std::uint8_t>;

struct CorpusConfig {
  std::size_t vocab_size = 12;        // K content symbols; id K is the filler
  std::size_t feature_dim = 16;       // F
  std::size_t frames_per_token = 4;   // d
  std::size_t num_speakers = 8;       // S
  std::size_t min_tokens = 4;
  std::size_t max_tokens = 12;
  double noise_std = 0.05;
  double offset_std = 0.5;            // spread of per-speaker offsets
  std::size_t num_train = 1024;
  std::size_t eval_per_speaker = 4;   // held-out utterances per speaker
  double mask_ratio_lo = 0.7;
  double mask_ratio_hi = 1.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError on K < 2, F < 4, d < 1, min > max, bad ratios.
  void validate() const;
  [[nodiscard]] std::size_t filler_id() const noexcept { return vocab_size; }
};

/// `corpus.*` keys <-> CorpusConfig. Missing keys keep the values in `base`.
CorpusConfig corpus_config_from(const io::Config& cfg, CorpusConfig base = {});
void write_corpus_config(const CorpusConfig& c, io::Config& out);

/// Per-symbol feature templates and per-speaker offsets.
struct SpeakerBank {
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 0;
  std::size_t frames_per_token = 0;
  std::size_t num_speakers = 0;
  Tensor templates;  // [K x F x d]
  Tensor offsets;    // [S x F]

  [[nodiscard]] double template_at(std::size_t symbol, std::size_t channel, std::size_t frame) const;
  [[nodiscard]] double offset_at(std::size_t speaker, std::size_t channel) const;
  /// Minimum pairwise L2 distance between the K templates.
  [[nodiscard]] double min_template_distance() const;
};

struct Utterance {
  TokenSeq tokens;         // y, content ids < K
  Tensor features;         // x1, [F x N] with N = |y| * d
  std::size_t speaker = 0;
  TokenSeq padded_tokens;  // y followed by filler ids up to length N
  TemporalMask mask;       // all zero until a mask is sampled

  [[nodiscard]] std::size_t num_frames() const { return features.dim(1); }
};

/// Draws templates and offsets from `cfg.seed`; templates are resampled until
/// the minimum pairwise distance exceeds 4 * noise_std * sqrt(F * d).
/// Throws std::runtime_error if that fails after a bounded number of retries.
SpeakerBank build_bank(const CorpusConfig& cfg);

/// x1[:, t*d:(t+1)*d] = template[y_t] + offset[speaker] + N(0, noise_std^2).
Utterance synthesize(const SpeakerBank& bank, const TokenSeq& tokens, std::size_t speaker_id, double noise_std,
                     std::uint64_t seed);

/// Single contiguous span of round(r*N) frames (at least one), r ~ U[lo, hi],
/// start uniform over the admissible positions.
TemporalMask sample_mask(std::size_t num_frames, double ratio_lo, double ratio_hi, numerics::Rng& rng);
TemporalMask sample_mask(std::size_t num_frames, double ratio_lo, double ratio_hi, std::uint64_t seed);

/// x_m = (1 - m) (.) x1 with m broadcast over channels.
Tensor apply_mask(const Tensor& x1, const TemporalMask& mask);
/// Number of masked frames.
std::size_t mask_count(const TemporalMask& mask);

struct DecodeResult {
  TokenSeq tokens;
  std::size_t speaker = 0;
};

/// Nearest-template decoding. For each candidate speaker the offset is
/// subtracted and every d-frame block is matched to its closest template; the
/// speaker with the smallest total residual wins. Ties go to the lowest index.
DecodeResult decode_features(const SpeakerBank& bank, const Tensor& x);

/// Column mean of (x - tiled templates of `tokens`); estimates the speaker offset.
std::vector<double> recover_offset(const SpeakerBank& bank, const Tensor& x, const TokenSeq& tokens);

/// Sub-range of frames [begin, end) of a [F x N] feature matrix.
Tensor slice_frames(const Tensor& x, std::size_t begin, std::size_t end);

struct Corpus {
  CorpusConfig config;
  SpeakerBank bank;
  std::vector<Utterance> train;
  std::vector<Utterance> eval;
};

/// Full corpus as a pure function of the config (and its seed).
Corpus build_corpus(const CorpusConfig& cfg);

// ---------------------------------------------------------------------------
// On-disk layout (little-endian). Every utterance record:
//   "ADMA1" | u32 K | u32 F | u32 d | u32 S | u32 speaker | u32 T_y |
//   u32 tokens[T_y] | u32 N | f64 features[F*N] (row-major F x N)
// bank.bin: "ADMAB" | u32 K | u32 F | u32 d | u32 S | f64 templates[K*F*d] | f64 offsets[S*F]
// manifest.csv: id,speaker,length   (id = train-NNNNN / eval-NNNNN; length = N frames)
// ---------------------------------------------------------------------------

void write_utterance(const std::filesystem::path& path, const SpeakerBank& bank, const Utterance& utt);
Utterance read_utterance(const std::filesystem::path& path, const SpeakerBank& bank);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// The config's scalar fields are restored from corpus.cfg inside the directory.
Corpus load_corpus(const std::filesystem::path& dir);

/// Cached matrix (e.g. frozen-extractor targets): "ADMAT" | u32 rows | u32 cols | f64 data.
void write_matrix(const std::filesystem::path& path, const Tensor& m);
Tensor read_matrix(const std::filesystem::path& path);

}  // namespace adma::corpus
