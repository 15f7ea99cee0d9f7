#include <doctest.h>

#include <cmath>
#include <limits>

#include "adma/align/ctc.hpp"
#include "adma/error.hpp"
#include "adma/numerics/grad_check.hpp"
#include "adma/numerics/ops.hpp"
#include "test_util.hpp"

using namespace adma;
using namespace adma::align;
using numerics::Tensor;

namespace {

Tensor random_log_probs(std::size_t T, std::size_t C, numerics::Rng& rng, bool requires_grad = false) {
  auto lp = numerics::log_softmax(testing::random_tensor({T, C}, rng, false, 1.5), 1).detach();
  lp.set_requires_grad(requires_grad);
  return lp;
}

Tensor probs_to_log(const std::vector<std::vector<double>>& rows) {
  std::vector<std::vector<double>> logs = rows;
  for (auto& r : logs) {
    for (auto& v : r) v = std::log(v);
  }
  return Tensor::matrix(logs);
}

}  // namespace

TEST_SUITE("ctc") {
  TEST_CASE("single frame single symbol") {
    // vocab {a, b} + blank
    const auto lp = probs_to_log({{0.5, 0.2, 0.3}});
    const auto r = ctc_loss({lp, {0}});
    CHECK(r.feasible);
    CHECK(r.value == doctest::Approx(-std::log(0.5)).epsilon(1e-15));
  }

  TEST_CASE("two frames enumerate three paths") {
    const std::vector<std::vector<double>> p{{0.6, 0.1, 0.3}, {0.2, 0.5, 0.3}};
    const auto lp = probs_to_log(p);
    const double expect = p[0][0] * p[1][0] + p[0][0] * p[1][2] + p[0][2] * p[1][0];
    CHECK(ctc_loss({lp, {0}}).value == doctest::Approx(-std::log(expect)).epsilon(1e-14));
    CHECK(ctc_brute_force({lp, {0}}) == doctest::Approx(-std::log(expect)).epsilon(1e-14));
  }

  TEST_CASE("repeated symbol needs a separating blank") {
    const auto lp = probs_to_log({{0.5, 0.2, 0.3}});
    const auto r = ctc_loss({lp, {0, 0}});
    CHECK_FALSE(r.feasible);
    CHECK(std::isinf(r.value));
    CHECK_FALSE(r.loss.defined());
    CHECK(ctc_min_frames({0, 0}) == 3);
    CHECK(ctc_min_frames({0, 1, 1, 1}) == 6);
    CHECK(ctc_min_frames({}) == 0);
  }

  TEST_CASE("brute force closed forms") {
    const auto uniform = Tensor::full({2, 2}, std::log(0.5));
    CHECK(ctc_brute_force({uniform, {0}}) == doctest::Approx(-std::log(0.75)).epsilon(1e-15));
    const std::vector<std::vector<double>> p{{0.6, 0.1, 0.3}, {0.2, 0.5, 0.3}};
    CHECK(ctc_brute_force({probs_to_log(p), {}}) == doctest::Approx(-std::log(0.09)).epsilon(1e-14));
    CHECK(ctc_loss({probs_to_log(p), {}}).value == doctest::Approx(-std::log(0.09)).epsilon(1e-14));
    CHECK_THROWS_AS((void)ctc_brute_force({Tensor::full({12, 4}, std::log(0.25)), {0}}), DomainError);
  }

  TEST_CASE("dynamic program matches exhaustive enumeration") {
    numerics::Rng rng(2024);
    std::size_t instances = 0, infeasible = 0;
    double worst = 0.0;
    for (std::size_t K = 1; K <= 3; ++K) {
      for (std::size_t T = 1; T <= 6; ++T) {
        for (std::size_t U = 0; U <= 3; ++U) {
          for (int rep = 0; rep < 8; ++rep) {
            TokenSeq y(U);
            for (auto& k : y) k = rng.below(K);
            const auto lp = random_log_probs(T, K + 1, rng);
            const auto dp = ctc_loss({lp, y});
            const double bf = ctc_brute_force({lp, y});
            ++instances;
            if (!dp.feasible) {
              ++infeasible;
              CHECK(std::isinf(bf));
              continue;
            }
            worst = std::max(worst, std::abs(dp.value - bf));
          }
        }
      }
    }
    CHECK(instances >= 500);
    CHECK(infeasible > 0);
    CHECK(worst < 1e-9);
  }

  TEST_CASE("feasibility is monotone in the number of frames") {
    numerics::Rng rng(9);
    for (int rep = 0; rep < 50; ++rep) {
      TokenSeq y(1 + rng.below(4));
      for (auto& k : y) k = rng.below(2);
      const std::size_t need = ctc_min_frames(y);
      for (std::size_t T = 1; T <= need + 2; ++T) {
        CHECK(ctc_loss({random_log_probs(T, 3, rng), y}).feasible == (T >= need));
      }
    }
  }

  TEST_CASE("log-space stability with extreme log-probabilities") {
    std::vector<double> logits(5 * 4);
    numerics::Rng rng(11);
    for (auto& v : logits) v = rng.uniform() < 0.4 ? -700.0 : rng.normal();
    const auto lp = numerics::log_softmax(Tensor::from({5, 4}, logits), 1);
    for (double v : lp.data()) CHECK(std::isfinite(v));
    const auto r = ctc_loss({lp, {0, 2, 0}});
    CHECK(r.feasible);
    CHECK(std::isfinite(r.value));
    CHECK(r.value == doctest::Approx(ctc_brute_force({lp, {0, 2, 0}})).epsilon(1e-12));
  }

  TEST_CASE("rejects unnormalized rows and blank targets") {
    CHECK_THROWS_AS((void)ctc_loss({Tensor::full({2, 3}, 0.0), {0}}), DomainError);
    CHECK_THROWS_AS((void)ctc_loss({Tensor::full({2, 3}, std::log(1.0 / 3.0)), {2}}), DomainError);
    CHECK_THROWS_AS((void)ctc_loss({Tensor::full({2, 1}, 0.0), {}}), DimensionError);
  }

  TEST_CASE("gradient against finite differences") {
    numerics::Rng rng(12);
    // Through log-softmax: T=4, U=2, K=3.
    auto logits = testing::random_tensor({4, 4}, rng, true);
    const TokenSeq y{1, 2};
    auto f = [&] { return ctc_loss({numerics::log_softmax(logits, 1), y}).loss; };
    const auto rep = numerics::grad_check(f, {{"logits", logits}}, {1e-5, 1e-5, 0});
    INFO(numerics::format_report(rep));
    CHECK(rep.passed);

    // Directly on the log-probability entries, normalization check relaxed for the probes.
    auto lp = random_log_probs(5, 4, rng, true);
    auto g = [&] { return ctc_loss({lp, {0, 0, 2}}, 1e-3).loss; };
    const auto rep2 = numerics::grad_check(g, {{"log_probs", lp}}, {1e-5, 1e-5, 0});
    INFO(numerics::format_report(rep2));
    CHECK(rep2.passed);
  }

  TEST_CASE("greedy decoding") {
    auto onehot = [](const std::vector<std::size_t>& ids) {
      std::vector<std::vector<double>> rows;
      for (auto id : ids) {
        std::vector<double> r(3, std::log(0.1));
        r[id] = std::log(0.8);
        rows.push_back(r);
      }
      return Tensor::matrix(rows);
    };
    CHECK(ctc_greedy_decode(onehot({0, 0, 2, 1})) == TokenSeq{0, 1});
    CHECK(ctc_greedy_decode(onehot({2, 2, 2})).empty());
    CHECK(ctc_greedy_decode(onehot({0, 2, 0})) == TokenSeq{0, 0});
    CHECK(ctc_greedy_decode(Tensor::full({2, 3}, std::log(1.0 / 3.0))) == TokenSeq{0});
    CHECK(strip_filler({3, 1, 5, 5, 5}, 5) == TokenSeq{3, 1});
  }

  TEST_CASE("text alignment loss through a head") {
    numerics::Rng rng(13);
    numerics::ParamStore store;
    const auto head = make_ctc_head(store, "ctc", 5, 3, 0.5, rng);
    CHECK(head.blank() == 3);
    auto hidden = testing::random_tensor({4, 5}, rng, true);
    const TokenSeq y{0, 2};
    for (auto red : {TextReduction::raw, TextReduction::per_token, TextReduction::per_frame}) {
      auto f = [&] { return text_align_loss(hidden, head, y, red).loss; };
      const auto rep = numerics::grad_check(
          f, {{"hidden", hidden}, {"ctc.weight", head.weight}, {"ctc.bias", head.bias}}, {1e-5, 1e-5, 0});
      INFO(text_reduction_name(red) << "\n" << numerics::format_report(rep));
      CHECK(rep.passed);
      const auto a = text_align_loss(hidden, head, y, red);
      const auto b = text_align_loss(hidden, head, y, red);
      CHECK(a.value >= 0.0);
      CHECK(a.value == b.value);
      CHECK(a.loss.item() == a.value);
    }
    const double raw = text_align_loss(hidden, head, y).value;
    CHECK(text_align_loss(hidden, head, y, TextReduction::per_token).value == doctest::Approx(raw / 2).epsilon(1e-15));
    CHECK(text_align_loss(hidden, head, y, TextReduction::per_frame).value == doctest::Approx(raw / 4).epsilon(1e-15));
    CHECK(parse_text_reduction("per_token") == TextReduction::per_token);
    CHECK_THROWS_AS((void)parse_text_reduction("sum"), ConfigError);
  }
}
