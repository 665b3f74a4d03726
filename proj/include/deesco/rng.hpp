#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace deesco {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Small counter-based generator (splitmix64). The entire state is one u64,
/// which keeps every stream trivially serializable and platform-stable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased enough for shuffling; bias is O(n / 2^64).
  std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  /// Box-Muller without a cached spare, so the state stays a single word.
  double normal() {
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Normal resampled until |z| <= cutoff (in units of sigma).
  double truncated_normal(double cutoff = 2.0) {
    for (;;) {
      double z = normal();
      if (z >= -cutoff && z <= cutoff) return z;
    }
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Labeled substream derivation: every consumer of randomness gets its own
/// stream keyed by (master seed, label, indices), so e.g. disabling the
/// combinatory loss cannot perturb the data-shuffling stream.
inline Rng substream(std::uint64_t master, std::string_view label,
                     std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = fnv1a64(label);
  h = mix64(h ^ master);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  return Rng(h);
}

/// Deterministic Fisher-Yates permutation of {0..n-1}.
inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace deesco
