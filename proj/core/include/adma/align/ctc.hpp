#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "adma/corpus/corpus.hpp"
#include "adma/numerics/params.hpp"
#include "adma/numerics/tensor.hpp"

namespace adma::align {

using corpus::TokenSeq;
using numerics::Tensor;

/// Log-probabilities [T x (K+1)]; column K is the CTC blank.
struct CtcInstance {
  Tensor log_probs;
  TokenSeq target;  // content ids < K
};

struct CtcResult {
  /// Gradient-tracked scalar; undefined when the target is infeasible.
  Tensor loss;
  /// -log p(target); +infinity when infeasible.
  double value = 0.0;
  bool feasible = true;
};

/// Frames needed to emit `target`: U plus one per adjacent repeat.
std::size_t ctc_min_frames(const TokenSeq& target);

/// -log of the summed probability of all alignments that collapse to the target,
/// by the log-space forward recursion over the blank-interleaved target.
/// Gradients w.r.t. log_probs come from the matching backward recursion.
/// Rows must log-sum-exp to 0 within `normalization_tol` (DomainError otherwise);
/// pass a large tolerance to evaluate unnormalized scores.
CtcResult ctc_loss(const CtcInstance& instance, double normalization_tol = 1e-10);

/// Exhaustive enumeration over all (K+1)^T label paths. Throws DomainError when
/// (K+1)^T exceeds 1e7.
double ctc_brute_force(const CtcInstance& instance);

struct CtcOracleReport {
  std::size_t instances = 0;
  std::size_t infeasible = 0;     // both sides agreed the target cannot be emitted
  double max_abs_diff = 0.0;      // +infinity if the two disagree on feasibility
};

/// ctc_loss against ctc_brute_force on random instances with T in [1, max_T],
/// U in [0, max_U] and K in [1, max_K], rows drawn as log-softmax of standard normals.
CtcOracleReport ctc_oracle_check(std::size_t instances, std::size_t max_T, std::size_t max_U, std::size_t max_K,
                                 std::uint64_t seed);

/// Per-frame argmax (lowest index on ties), merge repeats, drop blanks.
TokenSeq ctc_greedy_decode(const Tensor& log_probs);

/// Removes every occurrence of `filler` from a padded token sequence.
TokenSeq strip_filler(const TokenSeq& padded, std::size_t filler);

/// Linear map D_h -> K+1 with the blank at index K.
struct CtcHead {
  Tensor weight;  // [D_h x (K+1)]
  Tensor bias;    // [K+1]

  [[nodiscard]] std::size_t num_classes() const { return bias.numel(); }
  [[nodiscard]] std::size_t blank() const { return num_classes() - 1; }
};

/// Registers `<prefix>.weight` (truncated normal) and `<prefix>.bias` (zeros).
CtcHead make_ctc_head(numerics::ParamStore& store, const std::string& prefix, std::size_t width,
                      std::size_t vocab_size, double init_std, numerics::Rng& rng);
CtcHead bind_ctc_head(const numerics::ParamStore& store, const std::string& prefix);

/// Per-utterance reduction of -log p before batch averaging.
enum class TextReduction { raw, per_token, per_frame };
TextReduction parse_text_reduction(const std::string& name);
std::string text_reduction_name(TextReduction r);

/// hidden [T x D_h] -> head -> log-softmax -> ctc_loss, then the reduction.
/// per_token divides by max(U, 1), per_frame by T.
CtcResult text_align_loss(const Tensor& hidden, const CtcHead& head, const TokenSeq& target,
                          TextReduction reduction = TextReduction::raw);

}  // namespace adma::align
