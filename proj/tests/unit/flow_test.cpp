#include <doctest.h>

#include <cmath>
#include <numbers>

#include "adma/error.hpp"
#include "adma/flow/flow.hpp"
#include "adma/numerics/ops.hpp"
#include "test_util.hpp"

using namespace adma;
using namespace adma::flow;
using numerics::Tensor;

namespace {

double integrate_exp(Solver solver, std::size_t steps) {
  SamplerConfig cfg;
  cfg.solver = solver;
  cfg.nfe_steps = steps;
  cfg.sway = 0.0;
  const auto x = solve_ode([](const Tensor& s, double) { return s; }, Tensor::scalar(1.0), time_grid(cfg), solver);
  return std::abs(x.item() - std::numbers::e);
}

}  // namespace

TEST_SUITE("flow") {
  TEST_CASE("path endpoints and target") {
    numerics::Rng rng(3);
    const auto x1 = testing::random_tensor({4, 6}, rng);
    const auto x0 = testing::random_tensor({4, 6}, rng);
    const auto s0 = make_flow_sample(x1, x0, 0.0);
    const auto s1 = make_flow_sample(x1, x0, 1.0);
    CHECK(s0.psi.to_vector() == x0.to_vector());
    CHECK(s1.psi.to_vector() == x1.to_vector());
    for (std::size_t i = 0; i < x1.numel(); ++i) CHECK(s0.target[i] == x1[i] - x0[i]);

    const auto h = make_flow_sample(Tensor::scalar(2.0), Tensor::scalar(0.0), 0.5);
    CHECK(h.psi.item() == 1.0);
    CHECK(h.target.item() == 2.0);
    CHECK_THROWS_AS((void)make_flow_sample(x1, x0, 1.5), DomainError);
  }

  TEST_CASE("target field is independent of t") {
    numerics::Rng rng(4);
    const auto x1 = testing::random_tensor({3, 5}, rng);
    const auto x0 = testing::random_tensor({3, 5}, rng);
    const auto a = make_flow_sample(x1, x0, 0.13);
    const auto b = make_flow_sample(x1, x0, 0.87);
    CHECK(a.target.to_vector() == b.target.to_vector());
    // Finite difference of psi in t reproduces the target.
    for (std::size_t i = 0; i < x1.numel(); ++i) {
      CHECK((b.psi[i] - a.psi[i]) / (0.87 - 0.13) == doctest::Approx(a.target[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("random flow sample draws t in the unit interval") {
    numerics::Rng rng(5);
    const auto x1 = Tensor::zeros({2, 3});
    for (int i = 0; i < 100; ++i) {
      const auto s = make_flow_sample(x1, rng);
      CHECK(s.t >= 0.0);
      CHECK(s.t <= 1.0);
    }
  }

  TEST_CASE("cfm loss values and gradient") {
    numerics::Rng rng(6);
    const auto target = testing::random_tensor({3, 4}, rng);
    const corpus::TemporalMask full(4, 1);
    CHECK(cfm_loss(target, target, full).item() == 0.0);
    CHECK(cfm_loss(numerics::add_scalar(target, 1.0), target, full).item() == doctest::Approx(1.0).epsilon(1e-15));

    const corpus::TemporalMask partial{0, 1, 1, 0};
    auto v = testing::random_tensor({3, 4}, rng, true);
    auto loss = cfm_loss(v, target, partial);
    loss.backward();
    const auto g = v.grad();
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t t = 0; t < 4; ++t) {
        const double expect = partial[t] ? 2.0 * (v.at(c, t) - target.at(c, t)) / 6.0 : 0.0;
        CHECK(g[c * 4 + t] == doctest::Approx(expect).epsilon(1e-14));
      }
    }
    // Full-frame switch ignores the mask.
    const double full_frame = cfm_loss(v, target, partial, false).item();
    CHECK(full_frame == doctest::Approx(cfm_loss(v, target, full).item()).epsilon(1e-15));
    CHECK_THROWS_AS((void)cfm_loss(v, target, corpus::TemporalMask(4, 0)), DomainError);
    CHECK_THROWS_AS((void)cfm_loss(v, target, corpus::TemporalMask(3, 1)), DimensionError);
  }

  TEST_CASE("sway sampling") {
    for (double u = 0.0; u <= 1.0; u += 0.01) CHECK(sway_sample(u, 0.0) == u);
    for (double s : {-1.0, -0.5, 0.3, 1.0}) {
      CHECK(sway_sample(0.0, s) == 0.0);
      CHECK(sway_sample(1.0, s) == 1.0);
    }
    CHECK(sway_sample(0.5, -1.0) == doctest::Approx(0.5 - (std::cos(std::numbers::pi / 4.0) - 0.5)).epsilon(1e-15));
    CHECK(sway_sample(0.5, -1.0) == doctest::Approx(0.292893).epsilon(1e-6));
    for (double s : {-1.0, -0.4, 0.0, 0.6, 1.0}) {
      double prev = 0.0;
      for (int i = 0; i <= 1000; ++i) {
        const double t = sway_sample(i / 1000.0, s);
        CHECK(t >= prev);
        prev = t;
      }
    }
    double acc = 0.0;
    for (int i = 0; i < 10000; ++i) acc += sway_sample((i + 0.5) / 10000.0, -1.0);
    CHECK(acc / 10000.0 < 0.45);
    CHECK_THROWS_AS((void)sway_sample(-0.1, 0.0), DomainError);
    CHECK_THROWS_AS((void)sway_sample(0.5, -1.5), DomainError);
  }

  TEST_CASE("constant field is integrated exactly") {
    numerics::Rng rng(7);
    const auto x0 = testing::random_tensor({2, 5}, rng);
    const auto c = testing::random_tensor({2, 5}, rng);
    for (std::size_t steps : {1u, 3u, 32u}) {
      for (double sway : {0.0, -1.0}) {
        SamplerConfig cfg;
        cfg.nfe_steps = steps;
        cfg.sway = sway;
        const auto x = solve_ode([&](const Tensor&, double) { return c; }, x0, time_grid(cfg), Solver::euler);
        for (std::size_t i = 0; i < x0.numel(); ++i) CHECK(std::abs(x[i] - (x0[i] + c[i])) < 1e-12);
      }
    }
  }

  TEST_CASE("single euler step equals one full-length step") {
    SamplerConfig cfg;
    cfg.nfe_steps = 1;
    const auto x = solve_ode([](const Tensor& s, double) { return s; }, Tensor::scalar(1.5), time_grid(cfg),
                             Solver::euler);
    CHECK(x.item() == 3.0);
  }

  TEST_CASE("empirical solver orders") {
    const double euler_order = std::log2(integrate_exp(Solver::euler, 64) / integrate_exp(Solver::euler, 128));
    const double mid_order = std::log2(integrate_exp(Solver::midpoint, 64) / integrate_exp(Solver::midpoint, 128));
    CHECK(euler_order >= 0.9);
    CHECK(euler_order <= 1.1);
    CHECK(mid_order >= 1.9);
    CHECK(mid_order <= 2.1);
  }

  TEST_CASE("non-finite trajectory names the step") {
    SamplerConfig cfg;
    cfg.nfe_steps = 8;
    cfg.sway = 0.0;
    auto blowup = [](const Tensor& s, double t) {
      return Tensor::full(s.shape(), t > 0.3 ? std::numeric_limits<double>::infinity() : 1.0);
    };
    try {
      (void)solve_ode(blowup, Tensor::scalar(0.0), time_grid(cfg), Solver::euler);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(std::string(e.what()).find("step 3") != std::string::npos);
    }
  }

  TEST_CASE("prompt overwrite keeps context frames") {
    numerics::Rng rng(8);
    const auto x = testing::random_tensor({3, 6}, rng);
    const auto xm = testing::random_tensor({3, 6}, rng);
    const corpus::TemporalMask m{0, 0, 1, 1, 1, 0};
    const auto out = overwrite_prompt(x, xm, m);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t t = 0; t < 6; ++t) CHECK(out.at(c, t) == (m[t] ? x.at(c, t) : xm.at(c, t)));
    }
  }

  TEST_CASE("sampler config parsing") {
    CHECK(parse_solver("midpoint") == Solver::midpoint);
    CHECK_THROWS_AS((void)parse_solver("rk4"), ConfigError);
    SamplerConfig c;
    c.nfe_steps = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    const auto grid = time_grid(c);
    CHECK(grid.size() == 33);
    CHECK(grid.front() == 0.0);
    CHECK(grid.back() == 1.0);
  }
}
