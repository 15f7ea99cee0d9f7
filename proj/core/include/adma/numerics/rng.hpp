#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace adma::numerics {

/// splitmix64 finalizer; used to seed and to derive independent streams.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Hash a seed together with a list of stream coordinates (step, item, purpose...).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) noexcept;

/// xoshiro256** generator with portable uniform/normal draws.
///
/// The generator and both distributions are fully specified here, so a given
/// seed yields the same stream on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller (no cached spare, so the state is just four words).
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept;
  /// Normal truncated to [-2, 2] standard deviations by resampling.
  double truncated_normal(double stddev) noexcept;

  [[nodiscard]] const std::array<std::uint64_t, 4>& state() const noexcept { return s_; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace adma::numerics
