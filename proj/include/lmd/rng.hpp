#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace lmd {

/// Counter-based generator: "SplitMix64-CTR".
///
///   key        = mix64(seed + G * (stream + 1))
///   bits(c)    = mix64(key + G * (c + 1))
///   uniform(c) = ((bits(c) >> 11) + 1) * 2^-53          in (0, 1]
///   normal(c)  = sqrt(-2 ln uniform(2c)) * cos(2 pi uniform(2c + 1))
///
/// where G = 0x9E3779B97F4A7C15 and mix64 is the SplitMix64 finalizer
/// (shifts 30/27/31, multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB).
/// Every draw is a pure function of (seed, stream, counter), so any slice of
/// a stream can be generated independently and in parallel.
class CounterRng {
public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(mix64(seed + kGolden * (stream + 1))) {}

  static constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  [[nodiscard]] constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix64(key_ + kGolden * (counter + 1));
  }

  [[nodiscard]] constexpr double uniform(std::uint64_t counter) const noexcept {
    return static_cast<double>((bits(counter) >> 11) + 1) * 0x1.0p-53;
  }

  [[nodiscard]] double normal(std::uint64_t counter) const noexcept {
    const double r = std::sqrt(-2.0 * std::log(uniform(2 * counter)));
    return r * std::cos(2.0 * std::numbers::pi * uniform(2 * counter + 1));
  }

private:
  std::uint64_t key_;
};

} // namespace lmd
