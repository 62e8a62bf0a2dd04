#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "nas/common.hpp"

namespace nas {

// splitmix64 finalizer: the standard 64-bit avalanche mix.  Used to derive
// statistically independent stream seeds from (root seed, tag...) tuples so
// every consumer of randomness can be reconstructed from the run seed alone.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over a string; lets rng streams be derived per parameter name.
inline std::uint64_t hash_str(const char* s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (; *s; ++s) {
    h ^= static_cast<unsigned char>(*s);
    h *= 1099511628211ULL;
  }
  return h;
}

// Deterministic random stream.  All randomness in the library flows through
// this class; distributions are hand-rolled on top of mt19937_64 so results
// are identical across standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derives a child stream from a seed and a list of integer tags
  // (epoch, purpose id, index, ...).  Chained splitmix64 over the tags gives
  // well-separated seeds for nearby tag tuples.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t t : tags) h = mix64(h ^ mix64(t));
    return Rng(h);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).  Rejection-free modulo bias is negligible for
  // the small n used here, but we reject anyway to stay exactly uniform.
  std::uint64_t uniform_int(std::uint64_t n) {
    NAS_CHECK(n > 0, ContractError, "uniform_int: n must be positive");
    const std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates shuffle over indices [0, n).
  template <typename T>
  void shuffle(T* data, std::size_t n) {
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(data[i - 1], data[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stable purpose tags for stream derivation.  Values are part of the
// reproducibility contract: changing them changes every derived stream.
enum class StreamPurpose : std::uint64_t {
  kParamInit = 1,
  kShuffle = 2,
  kAugment = 3,
  kControllerSample = 4,
  kDropBlock = 5,
  kDataSynth = 6,
  kSplit = 7,
};

inline Rng derive_stream(std::uint64_t seed, StreamPurpose purpose,
                         std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng::derive(seed, {static_cast<std::uint64_t>(purpose), a, b});
}

}  // namespace nas
