#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "adma/corpus/corpus.hpp"
#include "adma/flow/flow.hpp"
#include "adma/flow/integrate.hpp"
#include "adma/model/model.hpp"

namespace adma::eval {

using corpus::TokenSeq;
using numerics::Tensor;

/// Levenshtein distance with unit costs.
std::size_t edit_distance(const TokenSeq& a, const TokenSeq& b);

/// Cross-sentence pair inside one speaker's held-out utterances.
struct EvalPair {
  std::size_t prompt = 0;  // index into corpus.eval
  std::size_t target = 0;
  std::size_t speaker = 0;
};

/// Per speaker with E >= 2 held-out utterances u_0..u_{E-1}: pairs (u_i, u_{(i+1) mod E}).
/// Speakers with fewer utterances are skipped and reported in `warnings`.
std::vector<EvalPair> eval_pairs(const corpus::Corpus& corpus, std::vector<std::string>* warnings = nullptr);

/// Prompt tokens kept so the generated share of frames matches `mask_ratio`:
/// clamp(round(target_tokens * (1 - r) / r), 1, prompt_tokens).
std::size_t prompt_length(std::size_t prompt_tokens, std::size_t target_tokens, double mask_ratio);

/// Context = first prompt_length tokens of the prompt utterance; the target's
/// frames follow, masked. Text = prompt prefix + target tokens + filler.
struct InfillCase {
  flow::InfillRequest request;
  std::size_t prompt_frames = 0;
  TokenSeq prompt_tokens;
  TokenSeq target_tokens;
};
InfillCase build_case(const corpus::Corpus& corpus, const EvalPair& pair, double mask_ratio);

struct PairScore {
  TokenSeq decoded;
  std::size_t edits = 0;
  std::size_t target_length = 0;
  double sim = 0.0;
};

/// Decodes the generated region and compares its recovered speaker offset with the prompt's.
PairScore score_generation(const corpus::SpeakerBank& bank, const Tensor& generated, const TokenSeq& target_tokens,
                           const Tensor& prompt, const TokenSeq& prompt_tokens);

struct EvalConfig {
  flow::SamplerConfig sampler;
  std::uint64_t seed = 0;
  /// Share of frames to generate; negative means the midpoint of the corpus mask-ratio range.
  double mask_ratio = -1.0;
};

struct EvalReport {
  double proxy_ser = 0.0;  // sum of edits / sum of target lengths
  double proxy_sim = 0.0;  // mean offset cosine
  std::size_t num_utterances = 0;
  flow::SamplerConfig sampler;
  std::vector<EvalPair> pairs;
  std::vector<PairScore> scores;
  std::vector<Tensor> generated;  // full [F x N] infills, prompt frames included
  std::vector<std::string> warnings;
};

/// Generates every pair's target region with `m` (pass the EMA weights) and scores it.
/// The model is only read.
EvalReport evaluate(const model::Model& m, const corpus::Corpus& corpus, const EvalConfig& cfg);

}  // namespace adma::eval
