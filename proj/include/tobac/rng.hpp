#pragma once

#include <cstdint>
#include <random>

namespace tobac {

/// SplitMix64 finalizer; used to derive independent per-item seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// hash(seed, index[, stream]) -> seed for an independent generator.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                                    std::uint64_t stream = 0) {
  return mix64(mix64(mix64(seed) ^ index) ^ (stream * 0xd1b54a32d192ed03ULL));
}

// Named stream tags so that different consumers of the same (seed, index)
// never share a generator.
enum class Stream : std::uint64_t {
  kCleanCorpus = 1,
  kPoison = 2,
  kAssemble = 3,
  kHeldout = 4,
  kInit = 5,
  kBatches = 6,
  kEvalTriggered = 7,
  kEvalClean = 8,
  kEvalScene = 9,
  kEvalCaption = 10,
  kEvalExpressivity = 11,
  kEvalVision = 12,
  kOod = 13,
  kFlip = 14,
  kHook = 15,
  kLink = 16,
  kReservedScenes = 17,
  kEvalControl = 18,
  kJitter = 19,
};

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, Stream s) {
  return derive_seed(seed, index, static_cast<std::uint64_t>(s));
}

/// Thin wrapper over mt19937_64 with the handful of draws the project needs.
/// Uniform doubles are built from the raw 64-bit output so results do not
/// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-free rejection keeps this simple and unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() { return dist_(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

template <typename Container>
void shuffle_in_place(Container& c, Rng& rng) {
  // Fisher-Yates with our own index draws (std::shuffle is not portable).
  for (std::size_t i = c.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(c[i - 1], c[j]);
  }
}

}  // namespace tobac
