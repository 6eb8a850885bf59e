#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>

namespace sae {

// SplitMix64 finalizer; used to derive independent stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

// Counter-based stream: output i is a pure function of (key, i), so a stream
// keyed by (seed, chain, iteration) is reproducible regardless of the order
// in which other streams were consumed. Satisfies UniformRandomBitGenerator.
class KeyedStream {
 public:
  using result_type = std::uint64_t;

  explicit KeyedStream(std::uint64_t key) : key_(key) {}
  KeyedStream(std::initializer_list<std::uint64_t> parts)
      : key_(derive_key(parts)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return mix64(key_ ^ mix64(counter_++)); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1).
  double uniform_open() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller without caching, so every draw consumes exactly two words.
  double normal() {
    double u1 = uniform_open();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace sae
