#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace priormf {

// All randomness flows from one user-visible seed. Sub-streams are derived
// with splitmix64 so that adding a consumer never perturbs existing streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream));
}

// Thin wrapper around mt19937_64 that avoids std::uniform_*_distribution,
// whose output is implementation-defined. Draws here are bit-reproducible
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Unbiased uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t rem = std::numeric_limits<std::uint64_t>::max() % n;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - rem;
    for (;;) {
      const std::uint64_t x = gen_();
      if (x < limit || rem + 1 == n) return x % n;
    }
  }

  std::mt19937_64& engine() { return gen_; }
  const std::mt19937_64& engine() const { return gen_; }

 private:
  std::mt19937_64 gen_;
};

/// Fisher-Yates shuffle driven by Rng::below (std::shuffle is not portable).
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace priormf
