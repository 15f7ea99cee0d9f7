#include "adma/train/gradient_suite.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>

#include "adma/train/trainer.hpp"

namespace adma::train {

namespace {

corpus::CorpusConfig tiny_corpus() {
  corpus::CorpusConfig c;
  c.vocab_size = 3;
  c.feature_dim = 4;
  c.frames_per_token = 2;
  c.num_speakers = 2;
  c.min_tokens = 4;
  c.max_tokens = 4;
  c.num_train = 4;
  c.eval_per_speaker = 2;
  return c;
}

void perturb(ParamStore& params, numerics::Rng& rng, double sd) {
  for (auto& t : params.tensors()) {
    for (auto& v : t.mutable_data()) v += rng.normal(0.0, sd);
  }
}

std::vector<numerics::NamedTensor> named(const ParamStore& model, const ParamStore& heads) {
  std::vector<numerics::NamedTensor> out;
  for (std::size_t i = 0; i < model.size(); ++i) out.emplace_back(model.names()[i], model.tensors()[i]);
  for (std::size_t i = 0; i < heads.size(); ++i) out.emplace_back(heads.names()[i], heads.tensors()[i]);
  return out;
}

}  // namespace

SuiteReport run_gradient_suite(double eps, double tol, std::uint64_t seed) {
  const auto corpus = corpus::build_corpus(tiny_corpus());
  const auto mcfg = model::tiny_profile(corpus.config.vocab_size + 1, corpus.config.feature_dim);

  TrainConfig base;
  base.seed = seed;
  base.batch_size = 2;
  base.extractor_layers = 2;
  base.extractor_dim = 6;
  TrainState state = make_train_state(mcfg, base);
  numerics::Rng rng(numerics::derive_seed(seed, {0x6C}));
  perturb(state.model.params(), rng, 0.3);
  perturb(state.heads, rng, 0.3);
  const auto batch = draw_batch(corpus, base, 1);
  const auto inputs = named(state.model.params(), state.heads);

  SuiteReport suite;
  auto run = [&](const std::string& name, TrainConfig cfg, Tensor StepLosses::*term) {
    const auto targets = build_target_cache(corpus, cfg);
    auto f = [&] { return compute_losses(state.model, state.heads, corpus, targets, batch, cfg).*term; };
    auto rep = numerics::grad_check(f, inputs, {eps, tol, 0});
    suite.max_rel_error = std::max(suite.max_rel_error, rep.max_rel_error);
    suite.passed = suite.passed && rep.passed;
    suite.cases.push_back({name, std::move(rep)});
  };

  TrainConfig only_cfm = base;
  only_cfm.enable_text = false;
  only_cfm.enable_speech = false;
  run("l_cfm", only_cfm, &StepLosses::cfm);
  for (auto r : {align::TextReduction::raw, align::TextReduction::per_token, align::TextReduction::per_frame}) {
    TrainConfig c = base;
    c.enable_speech = false;
    c.text_reduction = r;
    run("l_text/" + align::text_reduction_name(r), c, &StepLosses::text);
  }
  for (auto v : {align::SpeechVariant::neg_cos, align::SpeechVariant::l1, align::SpeechVariant::logsig_cos}) {
    TrainConfig c = base;
    c.enable_text = false;
    c.speech_variant = v;
    run("l_speech/" + align::speech_variant_name(v), c, &StepLosses::speech);
  }
  run("l_total", base, &StepLosses::total);
  return suite;
}

std::string format_suite(const SuiteReport& report) {
  std::string out;
  char line[160];
  for (const auto& c : report.cases) {
    std::snprintf(line, sizeof line, "%-22s tensors %3zu  max rel error %.3e  %s\n", c.name.c_str(),
                  c.report.entries.size(), c.report.max_rel_error, c.report.passed ? "ok" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "overall max rel error %.3e  %s\n", report.max_rel_error,
                report.passed ? "PASS" : "FAIL");
  return out + line;
}

}  // namespace adma::train
