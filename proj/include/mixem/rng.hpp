#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace mixem {

/// Philox4x32-10 counter-based generator.
///
/// The key is the 64-bit seed and the upper half of the counter is the
/// stream id, so (seed, stream_id) names an independent, reproducible stream
/// no matter which worker consumes it or when. Satisfies
/// UniformRandomBitGenerator, so it plugs into <random> distributions.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept : seed_(seed), stream_(stream_id) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  /// Uniform double in (0, 1).
  double uniform_open() noexcept { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  unsigned used_ = 4;  // 64-bit outputs are taken in pairs from each block
};

inline RngStream rng_stream(std::uint64_t seed, std::uint64_t stream_id) { return {seed, stream_id}; }

}  // namespace mixem
