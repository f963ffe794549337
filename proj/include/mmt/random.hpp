#pragma once

#include <cstdint>
#include <random>

namespace mmt {

/// SplitMix64 finalizer. Used as a stateless hash for counter-based streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent seed for a named sub-stream (epoch, sentence, layer...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// Counter-based uniform stream: draw k is a pure function of (seed, k), so a
/// forward pass restarted from the same counter replays identical masks.
class CounterStream {
 public:
  CounterStream() = default;
  explicit CounterStream(std::uint64_t seed, std::uint64_t counter = 0) noexcept
      : seed_(seed), counter_(counter) {}

  /// Uniform in [0, 1) with 53 bits of resolution.
  double next_uniform() noexcept {
    const std::uint64_t bits = mix64(seed_ ^ mix64(counter_++));
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }
  void rewind(std::uint64_t counter = 0) noexcept { counter_ = counter; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

using Engine = std::mt19937_64;

}  // namespace mmt
