#pragma once

#include <cstdint>
#include <initializer_list>

namespace blastlime {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based 64-bit generator.
///
/// Output number `i` of the stream keyed by `key` is
/// `mix64(key + (i + 1) * 0x9e3779b97f4a7c15)`, i.e. SplitMix64 with the key
/// as its starting state. Because every draw is a pure function of
/// (key, counter), independent streams are obtained by deriving distinct keys
/// with `derive`, and work split across threads stays reproducible.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  /// Key for a sub-stream identified by a path of integers.
  static std::uint64_t derive(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc908ULL);
    for (std::uint64_t p : path) h = mix64(h + kGamma + mix64(p + 0x3c6ef372fe94f82bULL));
    return h;
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept { return next(); }

  std::uint64_t next() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * kGamma);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n == 0) return 0;
    __uint128_t m = static_cast<__uint128_t>(next()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<__uint128_t>(next()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

/// Fisher-Yates shuffle with a fixed, library-independent draw sequence.
template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, CounterRng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const std::uint64_t j = rng.below(i);
    using std::swap;
    swap(first[i - 1], first[j]);
  }
}

}  // namespace blastlime
