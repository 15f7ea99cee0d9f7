#include <benchmark/benchmark.h>

#include "adma/align/ctc.hpp"
#include "adma/align/speech.hpp"
#include "adma/numerics/ops.hpp"

using namespace adma;
using numerics::Tensor;

namespace {

Tensor random_tensor(numerics::Shape shape, numerics::Rng& rng, bool grad = false) {
  std::vector<double> data(numerics::shape_numel(shape));
  for (double& v : data) v = rng.normal();
  return Tensor::from(std::move(shape), data, grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  numerics::Rng rng(1);
  const auto a = random_tensor({n, 64}, rng);
  const auto b = random_tensor({64, 64}, rng);
  numerics::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(numerics::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 64 * 64));
}
BENCHMARK(BM_Matmul)->Arg(48)->Arg(192)->Arg(768);

// Forward DP plus backward over a [T x 13] posterior with a U-token target.
void BM_CtcLoss(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  numerics::Rng rng(2);
  const auto logits = random_tensor({T, 13}, rng, true);
  corpus::TokenSeq y(T / 4);
  for (auto& k : y) k = rng.below(12);
  for (auto _ : state) {
    auto res = align::ctc_loss({numerics::log_softmax(logits, 1), y});
    res.loss.backward();
    benchmark::DoNotOptimize(res.value);
  }
}
BENCHMARK(BM_CtcLoss)->Arg(16)->Arg(48)->Arg(96);

void BM_CtcBruteForce(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  numerics::Rng rng(3);
  numerics::NoGradGuard no_grad;
  const auto lp = numerics::log_softmax(random_tensor({T, 4}, rng), 1);
  for (auto _ : state) benchmark::DoNotOptimize(align::ctc_brute_force({lp, {0, 1, 2}}));
}
BENCHMARK(BM_CtcBruteForce)->DenseRange(4, 8, 2);

void BM_SpeechAlign(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  numerics::Rng rng(4);
  numerics::ParamStore store;
  const auto proj = align::make_align_projector(store, "align", 64, 32, 0.02, rng);
  const auto hidden = random_tensor({n, 64}, rng, true);
  const auto target = random_tensor({n / 2, 32}, rng);
  for (auto _ : state) {
    auto loss = align::speech_align_loss(hidden, proj, target, align::SpeechVariant::neg_cos);
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_SpeechAlign)->Arg(16)->Arg(48);

}  // namespace
