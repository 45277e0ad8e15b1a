#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace star {

// 64-bit FNV-1a over UTF-8 bytes. Used to derive substream seeds from
// names and to hash text for the pseudo embedder.
constexpr uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

constexpr uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Deterministic generator; all randomness in the project flows through
// seeded instances of this so runs are reproducible bit-for-bit.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Symmetric uniform in (-1, 1); exact arithmetic, no libm involved.
  double symmetric() { return 2.0 * next_double() - 1.0; }

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double gaussian() {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  uint64_t next_below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

 private:
  uint64_t state_;
};

// Substream keyed by (seed, tag); adding streams never shifts existing ones.
inline SplitMix64 substream(uint64_t seed, std::string_view tag) {
  uint64_t s = seed ^ fnv1a64(tag);
  // One warm-up mix so nearby seeds decorrelate.
  splitmix64_next(s);
  return SplitMix64(s);
}

inline SplitMix64 substream(uint64_t seed, std::string_view tag, uint64_t index) {
  uint64_t s = seed ^ fnv1a64(tag) ^ (0x9E3779B97F4A7C15ull * (index + 1));
  splitmix64_next(s);
  return SplitMix64(s);
}

}  // namespace star
