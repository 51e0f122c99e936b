#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include "linksight/error.hpp"

namespace linksight {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

/// Derives a child seed from a root seed, a purpose tag and an index.
/// All randomness in the toolkit flows from one root seed through this
/// function, so independent stages never share an RNG stream.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::uint64_t index = 0) {
  std::uint64_t h = detail::fnv1a(purpose);
  return detail::splitmix64(detail::splitmix64(root ^ h) + index);
}

/// Seeded RNG with self-contained distributions. The standard library's
/// distribution objects are implementation-defined in the exact sequence
/// they produce; sampling on top of the raw mt19937_64 stream keeps
/// artifacts byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform_real(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  /// Uniform integer in [lo, hi], both bounds inclusive.
  int uniform_int(int lo, int hi) {
    if (lo > hi) throw ParameterError("rng: empty integer range");
    std::uint64_t span = static_cast<std::uint64_t>(hi) - lo + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  /// Box-Muller transform; consumes two uniforms per sample.
  double normal(double mean, double stddev) {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    double z = std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace linksight
