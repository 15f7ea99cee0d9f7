#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "adma/error.hpp"
#include "adma/model/model.hpp"
#include "adma/numerics/grad_check.hpp"
#include "test_util.hpp"

using namespace adma;
using namespace adma::model;
using numerics::Tensor;

namespace {

constexpr std::size_t kVocab = 5;
constexpr std::size_t kFeat = 3;

void randomize(ParamStore& params, std::uint64_t seed, double sd) {
  numerics::Rng rng(seed);
  for (auto& t : params.tensors()) {
    for (auto& v : t.mutable_data()) v = rng.normal(0.0, sd);
  }
}

ModelInput random_input(std::size_t n, std::size_t f, std::size_t vocab, numerics::Rng& rng, double t = 0.4) {
  ModelInput in;
  in.psi = testing::random_tensor({f, n}, rng);
  in.x_m = testing::random_tensor({f, n}, rng);
  for (std::size_t i = 0; i < n; ++i) in.padded_tokens.push_back(rng.below(vocab));
  in.t = t;
  return in;
}

std::vector<numerics::NamedTensor> named(const ParamStore& p) {
  std::vector<numerics::NamedTensor> out;
  for (std::size_t i = 0; i < p.size(); ++i) out.emplace_back(p.names()[i], p.tensors()[i]);
  return out;
}

Tensor weighted_sum(const Tensor& x, const Tensor& w) { return numerics::sum(numerics::mul(x, w)); }

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("config validation and keys") {
    ModelConfig c;
    c.validate();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.text_tap = 9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.text_conv_kernel = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    io::Config cfg;
    c = {};
    c.num_layers = 6;
    c.speech_tap = 5;
    write_model_config(c, cfg);
    const auto back = model_config_from(cfg);
    CHECK(back.num_layers == 6);
    CHECK(back.speech_tap == 5);
    CHECK(back.init_std == c.init_std);
  }

  TEST_CASE("output shape and zero-initialised field") {
    ModelConfig c;
    c.vocab = 13;
    c.feature_dim = 16;
    const Model m(c, 1);
    numerics::Rng rng(2);
    for (std::size_t n : {8u, 40u}) {
      const auto out = m.forward(random_input(n, 16, 13, rng), {{4, 7}});
      CHECK(out.v.shape() == numerics::Shape{16, n});
      for (double v : out.v.data()) CHECK(v == 0.0);
      REQUIRE(out.hidden.size() == 2);
      CHECK(out.hidden.at(4).shape() == numerics::Shape{n, 64});
      CHECK(out.hidden.at(7).shape() == numerics::Shape{n, 64});
    }
  }

  TEST_CASE("text refinement sees neighbours") {
    auto c = tiny_profile(kVocab, kFeat);
    Model m(c, 3);
    const auto e = m.embed_text({1, 2, 1, 3});
    CHECK(e.shape() == numerics::Shape{4, 8});
    bool differs = false;
    for (std::size_t j = 0; j < 8; ++j) differs = differs || e.at(0, j) != e.at(2, j);
    CHECK(differs);
    CHECK_THROWS_AS((void)m.embed_text({1, kVocab}), DomainError);
  }

  TEST_CASE("text refinement gradient") {
    auto c = tiny_profile(kVocab, kFeat);
    c.text_refine_layers = 2;
    Model m(c, 4);
    numerics::Rng rng(5);
    const auto w = testing::random_tensor({6, 8}, rng);
    std::vector<numerics::NamedTensor> inputs;
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      if (m.params().names()[i].rfind("text.", 0) == 0) inputs.emplace_back(m.params().names()[i], m.params().tensors()[i]);
    }
    REQUIRE(inputs.size() == 13);
    const auto rep = numerics::grad_check([&] { return weighted_sum(m.embed_text({0, 1, 1, 4, 2, 0}), w); }, inputs,
                                          {1e-5, 1e-5, 0});
    INFO(numerics::format_report(rep));
    CHECK(rep.passed);
  }

  TEST_CASE("time embedding") {
    Model m(tiny_profile(kVocab, kFeat), 6);
    const auto a = m.embed_time(0.0);
    const auto b = m.embed_time(1.0);
    CHECK(a.shape() == numerics::Shape{8});
    CHECK(a.to_vector() != b.to_vector());
    CHECK(m.embed_time(0.37).to_vector() == m.embed_time(0.37).to_vector());
    CHECK_THROWS_AS((void)m.embed_time(1.01), DomainError);

    numerics::Rng rng(7);
    const auto w = testing::random_tensor({1, 8}, rng);
    for (double t0 : {0.05, 0.5, 0.93}) {
      auto t = Tensor::from({1}, {t0}, true);
      const auto rep = numerics::grad_check([&] { return weighted_sum(m.embed_time(t), w); }, {{"t", t}},
                                            {1e-5, 1e-5, 0});
      INFO(numerics::format_report(rep));
      CHECK(rep.passed);
    }
  }

  TEST_CASE("full model gradient on the tiny profile") {
    const auto c = tiny_profile(kVocab, kFeat);
    Model m(c, 8);
    randomize(m.params(), 9, 0.4);
    numerics::Rng rng(10);
    const auto in = random_input(8, kFeat, kVocab, rng, 0.3);
    const auto wv = testing::random_tensor({kFeat, 8}, rng);
    const auto w1 = testing::random_tensor({8, 8}, rng);
    auto f = [&] {
      const auto out = m.forward(in, {{1, 2}});
      return numerics::add(weighted_sum(out.v, wv), weighted_sum(out.hidden.at(1), w1));
    };
    const auto rep = numerics::grad_check(f, named(m.params()), {1e-5, 1e-4, 0});
    INFO(numerics::format_report(rep));
    CHECK(rep.passed);
    CHECK(rep.entries.size() == m.params().size());
  }

  TEST_CASE("batch items do not interact") {
    Model m(tiny_profile(kVocab, kFeat), 11);
    randomize(m.params(), 12, 0.3);
    numerics::Rng rng(13);
    const auto a = random_input(8, kFeat, kVocab, rng, 0.2);
    const auto b = random_input(12, kFeat, kVocab, rng, 0.7);
    const auto c = random_input(8, kFeat, kVocab, rng, 0.5);
    const auto abc = m.forward_batch({a, b, c}, {{1}});
    const auto cab = m.forward_batch({c, a, b}, {{1}});
    CHECK(abc.v[0].to_vector() == cab.v[1].to_vector());
    CHECK(abc.v[1].to_vector() == cab.v[2].to_vector());
    CHECK(abc.v[2].to_vector() == cab.v[0].to_vector());
    CHECK(abc.hidden.at(1)[0].to_vector() == cab.hidden.at(1)[1].to_vector());
    const auto solo = m.forward(b);
    for (std::size_t i = 0; i < solo.v.numel(); ++i) CHECK(solo.v[i] == doctest::Approx(abc.v[1][i]).epsilon(1e-12));
  }

  TEST_CASE("taps are pure reads") {
    Model m(tiny_profile(kVocab, kFeat), 14);
    randomize(m.params(), 15, 0.3);
    numerics::Rng rng(16);
    const auto in = random_input(10, kFeat, kVocab, rng);
    const auto plain = m.forward(in);
    const auto tapped = m.forward(in, {{1, 2}});
    CHECK(plain.hidden.empty());
    CHECK(plain.v.to_vector() == tapped.v.to_vector());
    CHECK_THROWS_AS((void)m.forward(in, {{3}}), DomainError);
  }

  TEST_CASE("attention rows are distributions") {
    Model m(tiny_profile(kVocab, kFeat), 17);
    randomize(m.params(), 18, 1.0);
    numerics::Rng rng(19);
    numerics::AttentionProbe probe;
    (void)m.forward_batch({random_input(8, kFeat, kVocab, rng), random_input(5, kFeat, kVocab, rng)},
                          {{}, &probe});
    CHECK(probe.probs.size() == 2 * 2 * 2);  // layers x items x heads
    for (std::size_t p = 0; p < probe.probs.size(); ++p) {
      const std::size_t n = probe.sizes[p];
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += probe.probs[p][i * n + j];
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }

  TEST_CASE("time conditioning is live") {
    Model m(tiny_profile(kVocab, kFeat), 20);
    randomize(m.params(), 21, 0.3);
    numerics::Rng rng(22);
    auto in = random_input(8, kFeat, kVocab, rng, 0.1);
    const auto early = m.forward(in).v.to_vector();
    in.t = 0.9;
    CHECK(m.forward(in).v.to_vector() != early);
    CHECK(m.forward(in).v.to_vector() == m.forward(in).v.to_vector());
  }

  TEST_CASE("input validation") {
    Model m(tiny_profile(kVocab, kFeat), 23);
    numerics::Rng rng(24);
    auto in = random_input(8, kFeat, kVocab, rng);
    in.padded_tokens.pop_back();
    CHECK_THROWS_AS((void)m.forward(in), DimensionError);
    in = random_input(8, kFeat, kVocab, rng);
    in.x_m = testing::random_tensor({kFeat, 7}, rng);
    CHECK_THROWS_AS((void)m.forward(in), DimensionError);
    in = random_input(8, kFeat, kVocab, rng);
    in.t = -0.5;
    CHECK_THROWS_AS((void)m.forward(in), DomainError);
  }

  TEST_CASE("model file round trip") {
    Model m(tiny_profile(kVocab, kFeat), 25);
    randomize(m.params(), 26, 0.3);
    const auto dir = std::filesystem::temp_directory_path() / "adma_test_model";
    std::filesystem::create_directories(dir);
    save_model(dir / "a.bin", m);
    const auto back = load_model(dir / "a.bin");
    save_model(dir / "b.bin", back);
    CHECK(file_bytes(dir / "a.bin") == file_bytes(dir / "b.bin"));
    numerics::Rng rng(27);
    const auto in = random_input(8, kFeat, kVocab, rng);
    CHECK(m.forward(in).v.to_vector() == back.forward(in).v.to_vector());

    std::filesystem::resize_file(dir / "b.bin", 100);
    CHECK_THROWS_AS((void)load_model(dir / "b.bin"), FormatError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("copies own their parameters") {
    Model m(tiny_profile(kVocab, kFeat), 28);
    Model copy = m;
    copy.params().tensors()[0].mutable_data()[0] += 1.0;
    CHECK(copy.params().tensors()[0][0] != m.params().tensors()[0][0]);
  }

  TEST_CASE("position features") {
    const auto p = position_features(16, 8);
    CHECK(p.shape() == numerics::Shape{16, 8});
    CHECK(p.at(0, 0) == 0.0);
    CHECK(p.at(0, 4) == 1.0);
    // Shortest period is two frames.
    CHECK(p.at(2, 4) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(p.at(1, 4) == doctest::Approx(-1.0).epsilon(1e-14));
  }
}
