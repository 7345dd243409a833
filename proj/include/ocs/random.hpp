#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ocs {

// splitmix64 finalizer; used to derive independent stream seeds from tuples.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (auto k : keys) h = mix64(h ^ mix64(k));
  return h;
}

// Stream purposes. Keeping them distinct means adding draws for one purpose
// never shifts the values another purpose sees.
enum class Purpose : std::uint64_t {
  task = 1,
  gradient_noise = 2,
  coin = 3,
  oracle = 4,
  weights = 5,
  init = 6,
};

/// Deterministic random stream with value semantics: copying a stream
/// snapshots its state, so a copy replays exactly the same draws.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : engine_(seed) {}

  static RandomStream keyed(std::initializer_list<std::uint64_t> keys) {
    return RandomStream(derive_seed(keys));
  }

  // Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::uint64_t next() { return engine_(); }

  template <class Int>
  Int integer(Int lo, Int hi) {
    return std::uniform_int_distribution<Int>(lo, hi)(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

  friend bool operator==(const RandomStream&, const RandomStream&) = default;

 private:
  std::mt19937_64 engine_;
};

/// Per-round stream factory. Every client gets its own stream keyed by
/// (seed, round, client, purpose[, sub]), so client-side work can run in any
/// order or in parallel without changing results.
class RoundStreams {
 public:
  RoundStreams(std::uint64_t seed, std::uint64_t round) : seed_(seed), round_(round) {}

  RandomStream client(std::size_t client, Purpose purpose, std::uint64_t sub = 0) const {
    return RandomStream::keyed({seed_, round_, static_cast<std::uint64_t>(client),
                                static_cast<std::uint64_t>(purpose), sub});
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t round() const noexcept { return round_; }

  friend bool operator==(const RoundStreams&, const RoundStreams&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t round_;
};

}  // namespace ocs
