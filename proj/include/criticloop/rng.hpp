#pragma once

#include <cstdint>
#include <string_view>

// Deterministic randomness used by the mock backends and the seeded tests.
//
// Everything is counter-based: a decision value is a pure function of
// (seed, stream-key, call-index, draw-index). This is what makes runs
// reproducible regardless of thread scheduling: per-question streams never
// observe each other, so --parallel N cannot perturb the transcript of any
// individual question. std:: distributions are avoided on purpose; their
// output is implementation-defined and would break byte-identical runs
// across standard libraries.

namespace criticloop {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// One stochastic call's worth of draws. Seeded from (seed, key, call_index)
// and stepped with splitmix64; `uniform()` yields doubles in [0, 1).
class DecisionStream {
 public:
  DecisionStream(std::uint64_t seed, std::string_view key, std::uint64_t call_index)
      : state_(splitmix64(seed ^ splitmix64(fnv1a64(key)) ^ splitmix64(call_index * 0x9e3779b97f4a7c15ULL))) {}

  std::uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [1, n]; n must be >= 1.
  std::uint64_t uniform_index(std::uint64_t n) { return 1 + next_u64() % n; }

 private:
  std::uint64_t state_;
};

}  // namespace criticloop
