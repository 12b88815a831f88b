#pragma once

// Seeded randomness for the whole project.
//
// Every random quantity in probeforge flows from a 64-bit seed through the
// generators in this header; nothing reads wall-clock time or the OS entropy
// pool. The generator is xoshiro256** seeded through splitmix64, chosen for
// portability: its output is a pure function of the seed on every platform.
//
// Stream splitting: independent sub-streams are derived with
// derive_stream(seed, salt). Per-word-type draws (control behaviors, type
// vectors) use the type id as the salt, so a sampled spec does not depend on
// iteration order and can be reproduced type by type.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace probeforge {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Sub-stream seed for (seed, salt). The salt is folded in through an odd
// multiplier (injective mod 2^64) and the result whitened with splitmix64.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t s = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) from the top 53 bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform double in [-bound, bound).
  double next_symmetric(double bound) { return (2.0 * next_unit() - 1.0) * bound; }

  // Standard normal via the Marsaglia polar method. One value per call; the
  // pair's second value is discarded so the stream position is a simple
  // function of the draw count and acceptance history.
  double next_gaussian() {
    for (;;) {
      const double u = 2.0 * next_unit() - 1.0;
      const double v = 2.0 * next_unit() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // Unbiased integer in [0, n) by rejection from the top of the 64-bit range.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r < limit) return r % n;
    }
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
};

// Inverse-CDF draw from a categorical distribution. Entries with zero
// probability are never selected; boundary ties resolve to the lowest index.
// Returns a 0-based index into `probs`.
inline std::size_t sample_categorical(Rng& rng, std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("sample_categorical: empty distribution");
  const double u = rng.next_unit();
  double cum = 0.0;
  std::size_t last_positive = probs.size();
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] <= 0.0) continue;
    cum += probs[k];
    last_positive = k;
    if (u < cum) return k;
  }
  if (last_positive == probs.size())
    throw std::invalid_argument("sample_categorical: no positive-probability entry");
  return last_positive;  // u fell into the floating-point tail
}

}  // namespace probeforge
