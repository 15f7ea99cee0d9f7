#include "adma/eval/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "adma/error.hpp"

namespace adma::eval {

namespace {

constexpr std::uint64_t kEvalNoiseStream = 0xE7A1;

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::max(std::sqrt(aa) * std::sqrt(bb), 1e-8);
}

}  // namespace

std::size_t edit_distance(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<EvalPair> eval_pairs(const corpus::Corpus& corpus, std::vector<std::string>* warnings) {
  std::map<std::size_t, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < corpus.eval.size(); ++i) by_speaker[corpus.eval[i].speaker].push_back(i);
  std::vector<EvalPair> pairs;
  for (const auto& [speaker, utts] : by_speaker) {
    if (utts.size() < 2) {
      if (warnings) {
        warnings->push_back("speaker " + std::to_string(speaker) + " has " + std::to_string(utts.size()) +
                            " held-out utterance(s); skipped");
      }
      continue;
    }
    for (std::size_t i = 0; i < utts.size(); ++i) pairs.push_back({utts[i], utts[(i + 1) % utts.size()], speaker});
  }
  return pairs;
}

std::size_t prompt_length(std::size_t prompt_tokens, std::size_t target_tokens, double mask_ratio) {
  if (!(mask_ratio > 0.0 && mask_ratio <= 1.0)) {
    throw DomainError("prompt_length: mask ratio " + std::to_string(mask_ratio) + " outside (0, 1]");
  }
  if (prompt_tokens == 0) throw DomainError("prompt_length: empty prompt");
  const double want = std::round(static_cast<double>(target_tokens) * (1.0 - mask_ratio) / mask_ratio);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(want, 1.0)), 1, prompt_tokens);
}

InfillCase build_case(const corpus::Corpus& corpus, const EvalPair& pair, double mask_ratio) {
  const auto& a = corpus.eval.at(pair.prompt);
  const auto& b = corpus.eval.at(pair.target);
  const std::size_t d = corpus.config.frames_per_token;
  const std::size_t F = corpus.config.feature_dim;
  const std::size_t p = prompt_length(a.tokens.size(), b.tokens.size(), mask_ratio);

  InfillCase c;
  c.prompt_tokens.assign(a.tokens.begin(), a.tokens.begin() + static_cast<std::ptrdiff_t>(p));
  c.target_tokens = b.tokens;
  c.prompt_frames = p * d;
  const std::size_t n = c.prompt_frames + b.tokens.size() * d;

  std::vector<double> xm(F * n, 0.0);
  const auto src = a.features.data();
  const std::size_t na = a.num_frames();
  for (std::size_t ch = 0; ch < F; ++ch) {
    for (std::size_t t = 0; t < c.prompt_frames; ++t) xm[ch * n + t] = src[ch * na + t];
  }
  c.request.x_m = Tensor::from({F, n}, std::move(xm));
  c.request.mask.assign(n, 1);
  std::fill(c.request.mask.begin(), c.request.mask.begin() + static_cast<std::ptrdiff_t>(c.prompt_frames), 0);
  c.request.padded_tokens = c.prompt_tokens;
  c.request.padded_tokens.insert(c.request.padded_tokens.end(), b.tokens.begin(), b.tokens.end());
  c.request.padded_tokens.resize(n, corpus.config.filler_id());
  return c;
}

PairScore score_generation(const corpus::SpeakerBank& bank, const Tensor& generated, const TokenSeq& target_tokens,
                           const Tensor& prompt, const TokenSeq& prompt_tokens) {
  PairScore s;
  s.decoded = corpus::decode_features(bank, generated).tokens;
  s.edits = edit_distance(s.decoded, target_tokens);
  s.target_length = target_tokens.size();
  s.sim = cosine(corpus::recover_offset(bank, generated, s.decoded), corpus::recover_offset(bank, prompt, prompt_tokens));
  return s;
}

EvalReport evaluate(const model::Model& m, const corpus::Corpus& corpus, const EvalConfig& cfg) {
  EvalReport report;
  report.sampler = cfg.sampler;
  report.pairs = eval_pairs(corpus, &report.warnings);
  if (report.pairs.empty()) throw DomainError("evaluate: no speaker has two held-out utterances");
  const double ratio =
      cfg.mask_ratio > 0.0 ? cfg.mask_ratio : 0.5 * (corpus.config.mask_ratio_lo + corpus.config.mask_ratio_hi);

  std::vector<InfillCase> cases;
  std::vector<flow::InfillRequest> requests;
  for (const auto& pair : report.pairs) {
    cases.push_back(build_case(corpus, pair, ratio));
    requests.push_back(cases.back().request);
  }
  numerics::Rng rng(numerics::derive_seed(cfg.seed, {kEvalNoiseStream}));
  const auto generated = flow::integrate_batch(m, requests, cfg.sampler, rng);

  std::size_t edits = 0;
  std::size_t length = 0;
  double sim = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const std::size_t n = generated[i].dim(1);
    auto score = score_generation(corpus.bank, corpus::slice_frames(generated[i], c.prompt_frames, n), c.target_tokens,
                                  corpus::slice_frames(generated[i], 0, c.prompt_frames), c.prompt_tokens);
    edits += score.edits;
    length += score.target_length;
    sim += score.sim;
    report.scores.push_back(std::move(score));
  }
  report.generated = generated;
  report.num_utterances = cases.size();
  report.proxy_ser = static_cast<double>(edits) / static_cast<double>(length);
  report.proxy_sim = sim / static_cast<double>(cases.size());
  return report;
}

}  // namespace adma::eval
