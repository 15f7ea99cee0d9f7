#include "adma/align/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adma/error.hpp"
#include "adma/numerics/ops.hpp"

namespace adma::align {

namespace ops = numerics;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_instance(const CtcInstance& in, double tol) {
  const auto& lp = in.log_probs;
  if (lp.rank() != 2 || lp.dim(1) < 2) {
    throw DimensionError("ctc: log_probs must be [T x (K+1)] with K >= 1, got " + numerics::shape_str(lp.shape()));
  }
  const std::size_t blank = lp.dim(1) - 1;
  for (auto k : in.target) {
    if (k >= blank) throw DomainError("ctc: target id " + std::to_string(k) + " collides with blank or exceeds K");
  }
  const std::size_t c = lp.dim(1);
  const auto d = lp.data();
  for (std::size_t t = 0; t < lp.dim(0); ++t) {
    double acc = kNegInf;
    for (std::size_t k = 0; k < c; ++k) acc = log_add(acc, d[t * c + k]);
    if (std::isnan(acc)) throw NonFiniteError("ctc: row " + std::to_string(t) + " contains NaN");
    if (!(std::abs(acc) <= tol)) {
      throw DomainError("ctc: row " + std::to_string(t) + " is not a log-distribution (log-sum-exp " +
                        std::to_string(acc) + ")");
    }
  }
}

}  // namespace

std::size_t ctc_min_frames(const TokenSeq& target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1];
  return n;
}

CtcResult ctc_loss(const CtcInstance& instance, double normalization_tol) {
  check_instance(instance, normalization_tol);
  const auto& lp_t = instance.log_probs;
  const std::size_t T = lp_t.dim(0);
  const std::size_t C = lp_t.dim(1);
  const std::size_t blank = C - 1;
  const auto lp = lp_t.data();
  const auto& y = instance.target;

  CtcResult res;
  if (T < ctc_min_frames(y)) {
    res.value = std::numeric_limits<double>::infinity();
    res.feasible = false;
    return res;
  }

  const std::size_t S = 2 * y.size() + 1;
  std::vector<std::size_t> ext(S);
  for (std::size_t s = 0; s < S; ++s) ext[s] = (s % 2 == 0) ? blank : y[s / 2];
  auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(T * S, kNegInf);
  alpha[0] = lp[blank];
  if (S > 1) alpha[1] = lp[ext[1]];
  for (std::size_t t = 1; t < T; ++t) {
    const double* prev = &alpha[(t - 1) * S];
    double* cur = &alpha[t * S];
    for (std::size_t s = 0; s < S; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (skip_ok(s)) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + lp[t * C + ext[s]];
    }
  }
  double log_p = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_p = log_add(log_p, alpha[(T - 1) * S + S - 2]);
  if (log_p == kNegInf) {
    res.value = std::numeric_limits<double>::infinity();
    res.feasible = false;
    return res;
  }

  std::vector<double> grad;
  if (numerics::grad_enabled() && lp_t.requires_grad()) {
    // beta[t][s]: log-probability of finishing from state s at frame t, excluding frame t's emission.
    std::vector<double> beta(T * S, kNegInf);
    beta[(T - 1) * S + S - 1] = 0.0;
    if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
    for (std::size_t t = T - 1; t-- > 0;) {
      const double* next = &beta[(t + 1) * S];
      double* cur = &beta[t * S];
      const double* row = &lp[(t + 1) * C];
      for (std::size_t s = 0; s < S; ++s) {
        double b = next[s] == kNegInf ? kNegInf : next[s] + row[ext[s]];
        if (s + 1 < S && next[s + 1] != kNegInf) b = log_add(b, next[s + 1] + row[ext[s + 1]]);
        if (s + 2 < S && skip_ok(s + 2) && next[s + 2] != kNegInf) b = log_add(b, next[s + 2] + row[ext[s + 2]]);
        cur[s] = b;
      }
    }
    grad.assign(T * C, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t s = 0; s < S; ++s) {
        const double ab = alpha[t * S + s] + beta[t * S + s];
        if (ab == kNegInf) continue;
        grad[t * C + ext[s]] -= std::exp(ab - log_p);
      }
    }
  }

  res.value = -log_p;
  res.loss = ops::make_result("ctc_loss", {1}, {-log_p}, {lp_t}, [grad = std::move(grad)](ops::Node& self) {
    const double g = self.grad[0];
    std::vector<double> delta(grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) delta[i] = g * grad[i];
    ops::accumulate_grad(*self.inputs[0], delta);
  });
  return res;
}

double ctc_brute_force(const CtcInstance& instance) {
  check_instance(instance, std::numeric_limits<double>::infinity());
  const std::size_t T = instance.log_probs.dim(0);
  const std::size_t C = instance.log_probs.dim(1);
  const std::size_t blank = C - 1;
  double paths = 1.0;
  for (std::size_t t = 0; t < T; ++t) paths *= static_cast<double>(C);
  if (paths > 1e7) throw DomainError("ctc_brute_force: (K+1)^T = " + std::to_string(paths) + " exceeds 1e7");

  const auto lp = instance.log_probs.data();
  std::vector<std::size_t> path(T, 0);
  TokenSeq collapsed;
  collapsed.reserve(T);
  double acc = kNegInf;
  for (;;) {
    collapsed.clear();
    std::size_t prev = blank;
    double score = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t k = path[t];
      score += lp[t * C + k];
      if (k != blank && k != prev) collapsed.push_back(k);
      prev = k;
    }
    if (collapsed == instance.target) acc = log_add(acc, score);
    std::size_t t = 0;
    while (t < T && ++path[t] == C) path[t++] = 0;
    if (t == T) break;
  }
  return acc == kNegInf ? std::numeric_limits<double>::infinity() : -acc;
}

CtcOracleReport ctc_oracle_check(std::size_t instances, std::size_t max_T, std::size_t max_U, std::size_t max_K,
                                 std::uint64_t seed) {
  if (max_T == 0 || max_K == 0) throw DomainError("ctc_oracle_check: max_T and max_K must be positive");
  numerics::Rng rng(seed);
  CtcOracleReport rep;
  numerics::NoGradGuard no_grad;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t K = 1 + rng.below(max_K);
    const std::size_t T = 1 + rng.below(max_T);
    TokenSeq y(rng.below(max_U + 1));
    for (auto& k : y) k = rng.below(K);
    std::vector<double> logits(T * (K + 1));
    for (auto& v : logits) v = rng.normal();
    const auto lp = ops::log_softmax(Tensor::from({T, K + 1}, std::move(logits)), 1);
    const auto dp = ctc_loss({lp, y});
    const double bf = ctc_brute_force({lp, y});
    ++rep.instances;
    if (!dp.feasible || std::isinf(bf)) {
      if (dp.feasible != !std::isinf(bf)) rep.max_abs_diff = std::numeric_limits<double>::infinity();
      else ++rep.infeasible;
      continue;
    }
    rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(dp.value - bf));
  }
  return rep;
}

TokenSeq ctc_greedy_decode(const Tensor& log_probs) {
  if (log_probs.rank() != 2) throw DimensionError("ctc_greedy_decode: expected [T x (K+1)]");
  const std::size_t T = log_probs.dim(0);
  const std::size_t C = log_probs.dim(1);
  const std::size_t blank = C - 1;
  const auto d = log_probs.data();
  TokenSeq out;
  std::size_t prev = blank;
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < C; ++k) {
      if (d[t * C + k] > d[t * C + best]) best = k;
    }
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

TokenSeq strip_filler(const TokenSeq& padded, std::size_t filler) {
  TokenSeq out;
  for (auto k : padded) {
    if (k != filler) out.push_back(k);
  }
  return out;
}

CtcHead make_ctc_head(numerics::ParamStore& store, const std::string& prefix, std::size_t width,
                      std::size_t vocab_size, double init_std, numerics::Rng& rng) {
  store.add_trunc_normal(prefix + ".weight", {width, vocab_size + 1}, init_std, rng);
  store.add_zeros(prefix + ".bias", {vocab_size + 1});
  return bind_ctc_head(store, prefix);
}

CtcHead bind_ctc_head(const numerics::ParamStore& store, const std::string& prefix) {
  return CtcHead{store.get(prefix + ".weight"), store.get(prefix + ".bias")};
}

TextReduction parse_text_reduction(const std::string& name) {
  if (name == "raw") return TextReduction::raw;
  if (name == "per_token") return TextReduction::per_token;
  if (name == "per_frame") return TextReduction::per_frame;
  throw ConfigError("unknown text reduction '" + name + "' (expected raw, per_token or per_frame)");
}

std::string text_reduction_name(TextReduction r) {
  switch (r) {
    case TextReduction::raw: return "raw";
    case TextReduction::per_token: return "per_token";
    case TextReduction::per_frame: return "per_frame";
  }
  return "raw";
}

CtcResult text_align_loss(const Tensor& hidden, const CtcHead& head, const TokenSeq& target,
                          TextReduction reduction) {
  if (hidden.rank() != 2 || hidden.dim(1) != head.weight.dim(0)) {
    throw DimensionError("text_align_loss: hidden " + numerics::shape_str(hidden.shape()) + " vs head " +
                         numerics::shape_str(head.weight.shape()));
  }
  const auto logits = ops::linear(hidden, head.weight, head.bias);
  // log_softmax output is normalized to rounding; the tolerance only guards against misuse.
  auto res = ctc_loss({ops::log_softmax(logits, 1), target}, 1e-10);
  if (!res.feasible) return res;
  double div = 1.0;
  if (reduction == TextReduction::per_token) div = static_cast<double>(std::max<std::size_t>(target.size(), 1));
  if (reduction == TextReduction::per_frame) div = static_cast<double>(hidden.dim(0));
  if (div != 1.0) {
    res.loss = ops::scale(res.loss, 1.0 / div);
    res.value = res.loss.item();
  }
  return res;
}

}  // namespace adma::align
