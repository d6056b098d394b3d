#pragma once

/**
 * Seedable 64-bit random streams.
 *
 * Every stochastic operation in the library takes an explicit Rng so that
 * experiments are bit-reproducible. Named substreams are derived from a root
 * seed so independent pipeline stages never share state.
 */

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace flowsqueeze {

/// FNV-1a 64-bit hash; also used for artifact content hashing.
inline std::uint64_t fnv1a64(std::string_view data,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Derive a named substream from (seed, name). Distinct names give
  /// statistically independent streams for the same root seed.
  static Rng stream(std::uint64_t seed, std::string_view name) {
    std::uint64_t s = seed ^ fnv1a64(name);
    std::uint64_t mixed = splitmix64(s);
    return Rng(mixed);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in (0, 1].
  double next_double_open_low() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (stateless between calls, so the draw
  /// sequence is a pure function of the engine state).
  double next_gaussian() {
    double u1 = next_double_open_low();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n).
  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(next_double() * static_cast<double>(n)) %
           n;
  }

  /// Sample an index from unnormalized nonnegative weights.
  std::size_t sample_weights(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) {
      throw std::runtime_error("sample_weights: nonpositive total weight");
    }
    double u = next_double() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  /// Sample an index from unnormalized log-weights (log-sum-exp normalized).
  std::size_t sample_log_weights(std::span<const double> log_weights) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights) mx = std::max(mx, lw);
    std::vector<double> w(log_weights.size());
    for (std::size_t i = 0; i < log_weights.size(); ++i) {
      w[i] = std::exp(log_weights[i] - mx);
    }
    return sample_weights(w);
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = next_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace flowsqueeze
