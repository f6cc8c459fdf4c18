#pragma once

#include <cstdint>
#include <vector>

namespace csgru {

namespace detail {

// splitmix64 finalizer; full avalanche, used both as a stream generator and
// as the mixing core of the counter-based generator.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Map 64 random bits onto [0, 1) with 53-bit resolution.
inline constexpr double bits_to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace detail

// Sequential deterministic generator for initialization, shuffling and
// dataset synthesis. Platform-independent: integer ops plus an exact
// bits-to-double conversion, so identical seeds give identical streams
// everywhere.
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

  // Uniform in [0, 1).
  double uniform() { return detail::bits_to_unit(next_u64()); }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  // Derive an independent stream (e.g. per epoch) without disturbing this one.
  Rng fork(std::uint64_t tag) const {
    return Rng(detail::mix64(state_ ^ detail::mix64(tag)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Counter-based generator: a pure function of its key, so spike encodings
// are reproducible and independent of evaluation order or parallelism.
namespace counter_rng {

inline std::uint64_t hash(std::uint64_t seed, std::uint64_t sample,
                          std::uint64_t t, std::uint64_t pixel) {
  std::uint64_t h = detail::mix64(seed);
  h = detail::mix64(h ^ sample);
  h = detail::mix64(h ^ t);
  h = detail::mix64(h ^ pixel);
  return h;
}

// Uniform in [0, 1) keyed by (seed, sample, t, pixel).
inline double uniform(std::uint64_t seed, std::uint64_t sample, std::uint64_t t,
                      std::uint64_t pixel) {
  return detail::bits_to_unit(hash(seed, sample, t, pixel));
}

}  // namespace counter_rng

}  // namespace csgru
