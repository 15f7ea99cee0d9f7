#include <benchmark/benchmark.h>

#include "adma/corpus/corpus.hpp"
#include "adma/flow/integrate.hpp"
#include "adma/train/trainer.hpp"

using namespace adma;

namespace {

struct Desk {
  corpus::Corpus corpus;
  model::ModelConfig model;
  train::TrainConfig train;
};

const Desk& desk() {
  static const Desk d = [] {
    corpus::CorpusConfig cc;
    cc.num_train = 128;
    Desk out{corpus::build_corpus(cc), {}, {}};
    out.model.vocab = cc.vocab_size + 1;
    out.model.feature_dim = cc.feature_dim;
    return out;
  }();
  return d;
}

// One optimizer update at the default batch size; arg 1 enables both alignment losses.
void BM_TrainStep(benchmark::State& state) {
  numerics::tune_allocator();
  const auto& d = desk();
  auto cfg = d.train;
  cfg.enable_text = cfg.enable_speech = state.range(0) != 0;
  auto st = train::make_train_state(d.model, cfg);
  const auto targets = train::build_target_cache(d.corpus, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(train::train_step(st, d.corpus, targets, cfg));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ForwardBatch(benchmark::State& state) {
  const auto& d = desk();
  const model::Model m(d.model, 1);
  const auto draws = train::draw_batch(d.corpus, d.train, 1);
  std::vector<model::ModelInput> batch;
  for (const auto& it : draws) {
    const auto& u = d.corpus.train[it.index];
    batch.push_back({it.sample.psi, corpus::apply_mask(u.features, it.mask), u.padded_tokens, it.sample.t});
  }
  numerics::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward_batch(batch));
}
BENCHMARK(BM_ForwardBatch)->Unit(benchmark::kMillisecond);

void BM_Integrate(benchmark::State& state) {
  const auto& d = desk();
  const model::Model m(d.model, 2);
  const auto& u = d.corpus.eval.front();
  corpus::TemporalMask mask(u.features.dim(1), 1);
  flow::InfillRequest req{numerics::Tensor::zeros(u.features.shape()), mask, u.padded_tokens};
  flow::SamplerConfig sc;
  sc.solver = state.range(0) ? flow::Solver::midpoint : flow::Solver::euler;
  for (auto _ : state) {
    numerics::Rng rng(3);
    benchmark::DoNotOptimize(flow::integrate(m, req, sc, rng));
  }
}
BENCHMARK(BM_Integrate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
