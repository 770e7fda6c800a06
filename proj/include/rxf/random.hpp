#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rxf {

/// Engine plus portable distributions. The standard distributions are
/// implementation-defined, so bit-exact outputs need our own transforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next() { return eng_(); }
  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }
  /// Rayleigh with the given scale parameter.
  double rayleigh(double sigma) { return sigma * std::sqrt(-2.0 * std::log1p(-uniform())); }

 private:
  std::mt19937_64 eng_;
};

/// Decorrelates (seed, stream) pairs into engine seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace rxf
