#pragma once

#include <cstdint>
#include <limits>

namespace dpmix {

/// SplitMix64 generator. Satisfies UniformRandomBitGenerator so it plugs into
/// the <random> distributions.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Purpose tags that separate independent random streams.
enum class Purpose : std::uint64_t {
  batch = 1,
  noise_x = 2,
  noise_y = 3,
  output_index = 4,
  graph = 5,
  shard = 6,
  data = 7,
  split = 8,
  init = 9,
};

constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) noexcept {
  SplitMix64 g(h ^ (v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2)));
  return g();
}

/// Counter-based stream keyed by (seed, agent, iteration, purpose). Draws in
/// one stream never depend on how many draws another stream has made, so the
/// order in which agents are processed cannot change any sample.
constexpr SplitMix64 make_stream(std::uint64_t seed, std::uint64_t agent,
                                 std::uint64_t iteration, Purpose purpose) noexcept {
  std::uint64_t h = hash_combine(0x243F6A8885A308D3ULL, seed);
  h = hash_combine(h, agent);
  h = hash_combine(h, iteration);
  h = hash_combine(h, static_cast<std::uint64_t>(purpose));
  return SplitMix64(h);
}

}  // namespace dpmix
