#pragma once

#include <cstdint>
#include <string_view>

namespace spadvae {

// splitmix64: tiny, well-mixed 64-bit generator. One u64 of state, so a
// stream's position is trivially checkpointable, and sub-streams can be
// derived cheaply for parallel-safe determinism.
constexpr std::uint64_t splitmix64_next(std::uint64_t& state) noexcept {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over bytes; used for labels in seed derivation, config hashing, and
// file checksums.
constexpr std::uint64_t fnv1a64(const void* data, std::size_t len,
                                std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
  return fnv1a64(s.data(), s.size(), seed);
}

// Deterministic sub-seed: mixes a root seed with a purpose label and an index.
// Streams for different (label, index) pairs are independent for practical
// purposes, which lets per-frame / per-iteration work run in any order (or in
// parallel) without changing results.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                 std::uint64_t index = 0) noexcept {
  std::uint64_t s = root ^ fnv1a64(label);
  (void)splitmix64_next(s); // decorrelate nearby roots
  s ^= 0x9e3779b97f4a7c15ULL * (index + 1);
  std::uint64_t t = s;
  return splitmix64_next(t) ^ t;
}

class Rng {
public:
  Rng() = default;
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() noexcept { return splitmix64_next(state_); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n). Modulo bias is negligible for the n used here
  // (frame dims, small ranges) and keeps the draw a single u64 step.
  std::uint64_t next_below(std::uint64_t n) noexcept {
    return n == 0 ? 0 : next_u64() % n;
  }

  // Standard normal via Box-Muller (cosine branch, no caching: exactly two
  // uniform draws per sample, so stream position stays a pure function of the
  // number of calls).
  double next_normal() noexcept;

  std::uint64_t state() const noexcept { return state_; }
  void set_state(std::uint64_t s) noexcept { state_ = s; }

private:
  std::uint64_t state_ = 0;
};

} // namespace spadvae
