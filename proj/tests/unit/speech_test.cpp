#include <doctest.h>

#include <cmath>

#include "adma/align/speech.hpp"
#include "adma/error.hpp"
#include "adma/numerics/grad_check.hpp"
#include "adma/numerics/ops.hpp"
#include "test_util.hpp"

using namespace adma;
using namespace adma::align;
using numerics::Tensor;

namespace {

Tensor ramp(std::size_t n, std::size_t channels) {
  std::vector<double> d(n * channels);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < channels; ++c) d[t * channels + c] = static_cast<double>(t) * (1.0 + c);
  }
  return Tensor::from({n, channels}, std::move(d));
}

}  // namespace

TEST_SUITE("speech") {
  TEST_CASE("interpolation examples") {
    const auto x = ramp(4, 2);
    const auto two = interp_linear(x, 2);
    CHECK(two.to_vector() == std::vector<double>{0, 0, 3, 6});
    const auto three = interp_linear(x, 3);
    CHECK(three.to_vector() == std::vector<double>{0, 0, 1.5, 3, 3, 6});
    const auto one = interp_linear(x, 1);
    CHECK(one.to_vector() == std::vector<double>{1.5, 3});
    CHECK_THROWS_AS((void)interp_linear(ramp(1, 2), 1), DomainError);
    CHECK_THROWS_AS((void)interp_linear(x, 0), DomainError);
  }

  TEST_CASE("interpolation to the same length is the identity") {
    numerics::Rng rng(1);
    for (std::size_t n : {2u, 7u, 40u}) {
      const auto h = testing::random_tensor({n, 5}, rng);
      CHECK(interp_linear(h, n).to_vector() == h.to_vector());
    }
  }

  TEST_CASE("interpolation rows are convex combinations") {
    for (std::size_t n : {3u, 9u, 40u}) {
      for (std::size_t nf : {1u, 2u, 5u, 20u}) {
        const auto w = interp_matrix(n, nf);
        for (std::size_t j = 0; j < nf; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            CHECK(w.at(j, i) >= 0.0);
            s += w.at(j, i);
          }
          CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
        }
      }
    }
  }

  TEST_CASE("extractor shapes and selection") {
    const auto f = make_extractor(16, 32, 3, 7);
    numerics::Rng rng(2);
    const auto x = testing::random_tensor({16, 40}, rng);
    const auto last = extract_targets(f, x, TargetSelection::last);
    CHECK(last.shape() == numerics::Shape{20, 32});
    CHECK(extract_targets(f, x, TargetSelection::avg).shape() == numerics::Shape{20, 32});
    CHECK(f.output_frames(9) == 4);
    CHECK(extract_targets(f, testing::random_tensor({16, 9}, rng), TargetSelection::last).dim(0) == 4);
    CHECK_THROWS_AS((void)extract_targets(f, testing::random_tensor({16, 1}, rng), TargetSelection::last), DomainError);
    CHECK_FALSE(last.requires_grad());

    const auto single = make_extractor(16, 32, 1, 7);
    CHECK(extract_targets(single, x, TargetSelection::last).to_vector() ==
          extract_targets(single, x, TargetSelection::avg).to_vector());

    CHECK(make_extractor(16, 32, 3, 7).snapshot() == f.snapshot());
    CHECK(make_extractor(16, 32, 3, 8).snapshot() != f.snapshot());
  }

  TEST_CASE("averaging identical layer outputs equals the last layer") {
    // Second layer is a centre-tap identity kernel, so it reproduces the first layer's output.
    auto f = make_extractor(4, 4, 1, 11);
    std::vector<double> w(12 * 4, 0.0);
    for (std::size_t c = 0; c < 4; ++c) w[(4 + c) * 4 + c] = 1.0;
    f.layers.push_back(ExtractorLayer{Tensor::from({12, 4}, w), Tensor::zeros({4}), 3, 1, 1, 1});
    numerics::Rng rng(3);
    const auto x = testing::random_tensor({4, 10}, rng);
    const auto outs = f.layer_outputs(x);
    REQUIRE(outs.size() == 2);
    CHECK(outs[1].to_vector() == outs[0].to_vector());
    CHECK(extract_targets(f, x, TargetSelection::avg).to_vector() ==
          extract_targets(f, x, TargetSelection::last).to_vector());
  }

  TEST_CASE("loss variant values") {
    numerics::Rng rng(4);
    const auto t = testing::random_tensor({6, 5}, rng);
    CHECK(speech_loss(t, t, SpeechVariant::neg_cos).item() == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(speech_loss(numerics::scale(t, -1.0), t, SpeechVariant::neg_cos).item() ==
          doctest::Approx(1.0).epsilon(1e-14));
    CHECK(speech_loss(t, t, SpeechVariant::l1).item() == 0.0);
    CHECK(speech_loss(t, t, SpeechVariant::logsig_cos).item() ==
          doctest::Approx(-std::log(1.0 / (1.0 + std::exp(-1.0)))).epsilon(1e-14));

    const auto a = Tensor::matrix({{1, 0, 0}, {0, 2, 0}});
    const auto b = Tensor::matrix({{0, 3, 0}, {0, 0, -1}});
    CHECK(speech_loss(a, b, SpeechVariant::neg_cos).item() == 0.0);
    CHECK(std::abs(speech_loss(a, b, SpeechVariant::logsig_cos).item() - -std::log(0.5)) <= 1e-12);
    CHECK(speech_loss(a, b, SpeechVariant::l1).item() == doctest::Approx(7.0 / 6.0).epsilon(1e-15));
    CHECK_THROWS_AS((void)speech_loss(Tensor::zeros({2, 3}), b, SpeechVariant::neg_cos, 0.0), DomainError);
    CHECK_THROWS_AS((void)speech_loss(a, Tensor::zeros({3, 3}), SpeechVariant::l1), DimensionError);
  }

  TEST_CASE("loss variant bounds on random inputs") {
    numerics::Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
      const auto h = testing::random_tensor({4, 3}, rng);
      const auto t = testing::random_tensor({4, 3}, rng);
      const double nc = speech_loss(h, t, SpeechVariant::neg_cos).item();
      CHECK(nc >= -1.0);
      CHECK(nc <= 1.0);
      CHECK(speech_loss(h, t, SpeechVariant::l1).item() >= 0.0);
      CHECK(speech_loss(h, t, SpeechVariant::logsig_cos).item() >= -std::log(1.0 / (1.0 + std::exp(-1.0))) - 1e-12);
      const double c = 0.1 + 10.0 * rng.uniform();
      const auto cos_a = numerics::row_cosine(h, t).to_vector();
      const auto cos_b = numerics::row_cosine(numerics::scale(h, c), t).to_vector();
      for (std::size_t i = 0; i < cos_a.size(); ++i) CHECK(cos_b[i] == doctest::Approx(cos_a[i]).epsilon(1e-14));
    }
  }

  TEST_CASE("parallel rows stay inside the cosine bounds") {
    numerics::Rng rng(6);
    for (int rep = 0; rep < 300; ++rep) {
      const auto h = testing::random_tensor({3, 1 + rng.below(7)}, rng);
      const double c = (rep % 2 ? -1.0 : 1.0) * (0.1 + 10.0 * rng.uniform());
      for (double v : numerics::row_cosine(h, numerics::scale(h, c)).to_vector()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
      }
      const double nc = speech_loss(h, numerics::scale(h, c), SpeechVariant::neg_cos).item();
      CHECK(std::abs(nc) <= 1.0);
    }
  }

  TEST_CASE("projector gradients for every variant") {
    numerics::Rng rng(6);
    numerics::ParamStore store;
    const auto proj = make_align_projector(store, "align", 4, 6, 0.5, rng);
    store.tensors()[1].mutable_data()[0] = 0.3;  // non-trivial bias
    auto hidden = testing::random_tensor({8, 4}, rng, true);
    const auto target = testing::random_tensor({4, 6}, rng);
    for (auto v : {SpeechVariant::neg_cos, SpeechVariant::l1, SpeechVariant::logsig_cos}) {
      auto f = [&] { return speech_align_loss(hidden, proj, target, v); };
      const auto rep = numerics::grad_check(
          f, {{"hidden", hidden}, {"align.weight", proj.weight}, {"align.bias", proj.bias}}, {1e-5, 1e-5, 0});
      INFO(speech_variant_name(v) << "\n" << numerics::format_report(rep));
      CHECK(rep.passed);
    }
  }

  TEST_CASE("frozen extractor receives no gradient") {
    const auto f = make_extractor(6, 8, 3, 9);
    const auto before = f.snapshot();
    numerics::Rng rng(7);
    numerics::ParamStore store;
    const auto proj = make_align_projector(store, "align", 5, 8, 0.3, rng);
    auto hidden = testing::random_tensor({12, 5}, rng, true);
    const auto x1 = testing::random_tensor({6, 12}, rng);
    for (auto sel : {TargetSelection::last, TargetSelection::avg}) {
      auto loss = speech_align_loss(hidden, proj, extract_targets(f, x1, sel), SpeechVariant::neg_cos);
      loss.backward();
    }
    CHECK(f.grad_norm_sq() == 0.0);
    CHECK(f.snapshot() == before);
    for (const auto& l : f.layers) CHECK_FALSE(l.weight.requires_grad());
  }

  TEST_CASE("name parsing") {
    CHECK(parse_speech_variant("logsig_cos") == SpeechVariant::logsig_cos);
    CHECK(parse_target_selection("avg") == TargetSelection::avg);
    CHECK_THROWS_AS((void)parse_speech_variant("cos"), ConfigError);
    CHECK_THROWS_AS((void)parse_target_selection("first"), ConfigError);
  }
}
