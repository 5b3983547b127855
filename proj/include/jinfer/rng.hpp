#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

// Deterministic randomness. All draws bottom out in splitmix64, and all
// derived streams come from derive_seed(master, coordinates...), so results
// are reproducible bit-for-bit across runs, thread counts, and platforms.
// (std::..._distribution is deliberately not used: its output is not pinned
// down by the standard.)

namespace jinfer {

namespace detail {

constexpr std::uint64_t splitmix_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Stateless mixing of one value into a seed (splitmix64 finalizer over the
// combined words). Used to derive independent child streams.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t value) {
  std::uint64_t s = seed ^ (value + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
  return detail::splitmix_next(s);
}

// Child stream keyed by a path of coordinates, e.g.
// derive_seed(master, {turn, instance, repeat}). Streams with different paths
// never collide in practice, and adding new paths never perturbs old ones.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = detail::splitmix_next(master);
  for (std::uint64_t v : path) s = mix_seed(s, v);
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return detail::splitmix_next(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n). Lemire's multiply-shift with rejection.
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t threshold = (-un) % un;
    for (;;) {
      const std::uint64_t x = next_u64();
      const unsigned __int128 m = static_cast<unsigned __int128>(x) * un;
      if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<int>(m >> 64);
    }
  }

  // Standard normal via Box-Muller (two fresh uniforms per call; no caching,
  // so the draw sequence is a pure function of the call sequence).
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Index draw from unnormalized probabilities (inverse CDF walk).
  int categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    if (!(total > 0.0)) throw std::invalid_argument("Rng::categorical: probabilities sum to zero");
    double u = uniform01() * total;
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      cum += probs[i];
      if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;  // guard against rounding at u ~ total
  }

  // Index draw from unnormalized log-probabilities (stable softmax inline).
  int categorical_from_log(std::span<const double> log_probs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double lp : log_probs) mx = std::max(mx, lp);
    if (!std::isfinite(mx)) throw std::invalid_argument("Rng::categorical_from_log: all scores -inf or NaN");
    double total = 0.0;
    for (double lp : log_probs) total += std::exp(lp - mx);
    double u = uniform01() * total;
    double cum = 0.0;
    for (std::size_t i = 0; i < log_probs.size(); ++i) {
      cum += std::exp(log_probs[i] - mx);
      if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(log_probs.size()) - 1;
  }

  // First `count` entries of a random permutation of [0, n): partial
  // Fisher-Yates, output order is part of the draw.
  void sample_without_replacement(int n, int count, std::vector<int>& out) {
    if (count > n) throw std::invalid_argument("sample_without_replacement: count exceeds population");
    scratch_.resize(static_cast<std::size_t>(n));
    std::iota(scratch_.begin(), scratch_.end(), 0);
    out.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      const int j = i + uniform_int(n - i);
      std::swap(scratch_[static_cast<std::size_t>(i)], scratch_[static_cast<std::size_t>(j)]);
      out[static_cast<std::size_t>(i)] = scratch_[static_cast<std::size_t>(i)];
    }
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::uint64_t state_;
  std::vector<int> scratch_;
};

}  // namespace jinfer
